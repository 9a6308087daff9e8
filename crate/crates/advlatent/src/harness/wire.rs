//! Length-prefixed message transport and the edge endpoint's reply format.
//!
//! Every message is a little-endian u32 byte count followed by that many
//! bytes. Sessions are lockstep: one request frame, one reply.

use std::io::{Read, Write};

use crate::error::{Error, Result};

/// Upper bound on a single message; latents are far smaller.
pub const MAX_MESSAGE: usize = 1 << 28;

/// Send one length-prefixed message.
pub fn write_msg<W: Write>(writer: &mut W, bytes: &[u8]) -> Result<()> {
    if bytes.len() > MAX_MESSAGE {
        return Err(Error::validation(format!(
            "message of {} bytes exceeds the {MAX_MESSAGE}-byte cap",
            bytes.len()
        )));
    }
    writer.write_all(&(bytes.len() as u32).to_le_bytes())?;
    writer.write_all(bytes)?;
    writer.flush()?;
    Ok(())
}

/// Receive one message. `Ok(None)` means the peer closed the stream cleanly
/// at a message boundary.
pub fn read_msg<R: Read>(reader: &mut R) -> Result<Option<Vec<u8>>> {
    let mut prefix = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        let n = reader.read(&mut prefix[got..])?;
        if n == 0 {
            if got == 0 {
                return Ok(None);
            }
            return Err(Error::protocol(
                got,
                "stream closed inside a length prefix".to_string(),
            ));
        }
        got += n;
    }
    let len = u32::from_le_bytes(prefix) as usize;
    if len > MAX_MESSAGE {
        return Err(Error::protocol(
            0,
            format!("announced message of {len} bytes exceeds the {MAX_MESSAGE}-byte cap"),
        ));
    }
    let mut body = vec![0u8; len];
    reader
        .read_exact(&mut body)
        .map_err(|e| Error::protocol(4, format!("stream closed inside a message body: {e}")))?;
    Ok(Some(body))
}

/// What the edge endpoint sends back for each latent frame.
#[derive(Debug, Clone, PartialEq)]
pub enum EdgeReply {
    /// Predicted class, plus the score vector unless the edge suppresses it.
    Prediction {
        pred: usize,
        scores: Option<Vec<f32>>,
    },
    /// The frame was rejected; the session stays open.
    Rejected(String),
}

const TAG_REJECTED: u8 = 0;
const TAG_PREDICTION: u8 = 1;

impl EdgeReply {
    pub fn encode(&self) -> Vec<u8> {
        match self {
            EdgeReply::Rejected(msg) => {
                let mut out = vec![TAG_REJECTED];
                out.extend_from_slice(&(msg.len() as u32).to_le_bytes());
                out.extend_from_slice(msg.as_bytes());
                out
            }
            EdgeReply::Prediction { pred, scores } => {
                let mut out = vec![TAG_PREDICTION];
                out.extend_from_slice(&(*pred as u32).to_le_bytes());
                match scores {
                    None => out.push(0),
                    Some(values) => {
                        out.push(1);
                        out.extend_from_slice(&(values.len() as u32).to_le_bytes());
                        for v in values {
                            out.extend_from_slice(&v.to_le_bytes());
                        }
                    }
                }
                out
            }
        }
    }

    pub fn decode(bytes: &[u8]) -> Result<EdgeReply> {
        if bytes.is_empty() {
            return Err(Error::protocol(0, "empty reply".to_string()));
        }
        match bytes[0] {
            TAG_REJECTED => {
                if bytes.len() < 5 {
                    return Err(Error::protocol(bytes.len(), "rejection truncated".to_string()));
                }
                let len = u32::from_le_bytes(bytes[1..5].try_into().unwrap()) as usize;
                if bytes.len() != 5 + len {
                    return Err(Error::protocol(
                        bytes.len().min(5 + len),
                        "rejection length mismatch".to_string(),
                    ));
                }
                let msg = String::from_utf8_lossy(&bytes[5..]).into_owned();
                Ok(EdgeReply::Rejected(msg))
            }
            TAG_PREDICTION => {
                if bytes.len() < 6 {
                    return Err(Error::protocol(bytes.len(), "prediction truncated".to_string()));
                }
                let pred = u32::from_le_bytes(bytes[1..5].try_into().unwrap()) as usize;
                match bytes[5] {
                    0 => {
                        if bytes.len() != 6 {
                            return Err(Error::protocol(6, "trailing bytes".to_string()));
                        }
                        Ok(EdgeReply::Prediction { pred, scores: None })
                    }
                    1 => {
                        if bytes.len() < 10 {
                            return Err(Error::protocol(
                                bytes.len(),
                                "score count truncated".to_string(),
                            ));
                        }
                        let count = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
                        if bytes.len() != 10 + 4 * count {
                            return Err(Error::protocol(
                                bytes.len().min(10 + 4 * count),
                                "score list length mismatch".to_string(),
                            ));
                        }
                        let scores = bytes[10..]
                            .chunks_exact(4)
                            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                            .collect();
                        Ok(EdgeReply::Prediction {
                            pred,
                            scores: Some(scores),
                        })
                    }
                    other => Err(Error::protocol(5, format!("unknown score flag {other}"))),
                }
            }
            other => Err(Error::protocol(0, format!("unknown reply tag {other}"))),
        }
    }
}
