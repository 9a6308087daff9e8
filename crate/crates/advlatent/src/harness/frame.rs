//! Latent tensor wire encoding.
//!
//! Layout: 4-byte magic "ADVL", version byte, dtype byte (0 = float32,
//! 1 = uint8, 2 = uint16), rank byte, `rank` little-endian u32 dims, then
//! the row-major payload in little-endian element order. Every decode
//! failure reports the byte offset where parsing stopped.

use ndarray::{ArrayD, IxDyn};

use crate::error::{Error, Result};

pub const FRAME_MAGIC: [u8; 4] = *b"ADVL";
pub const FRAME_VERSION: u8 = 1;
pub const MAX_RANK: usize = 8;

/// A tensor as it travels on the wire.
#[derive(Debug, Clone, PartialEq)]
pub enum FrameTensor {
    F32(ArrayD<f32>),
    U8(ArrayD<u8>),
    U16(ArrayD<u16>),
}

impl FrameTensor {
    pub fn dtype_code(&self) -> u8 {
        match self {
            FrameTensor::F32(_) => 0,
            FrameTensor::U8(_) => 1,
            FrameTensor::U16(_) => 2,
        }
    }

    pub fn dtype_size(&self) -> usize {
        match self {
            FrameTensor::F32(_) => 4,
            FrameTensor::U8(_) => 1,
            FrameTensor::U16(_) => 2,
        }
    }

    pub fn shape(&self) -> &[usize] {
        match self {
            FrameTensor::F32(a) => a.shape(),
            FrameTensor::U8(a) => a.shape(),
            FrameTensor::U16(a) => a.shape(),
        }
    }
}

/// Serialize a tensor to frame bytes.
pub fn encode_frame(tensor: &FrameTensor) -> Result<Vec<u8>> {
    let shape = tensor.shape();
    if shape.len() > MAX_RANK {
        return Err(Error::validation(format!(
            "rank {} tensor, frames carry at most {MAX_RANK} dims",
            shape.len()
        )));
    }
    for &d in shape {
        if d as u64 > u32::MAX as u64 {
            return Err(Error::validation(format!("dimension {d} exceeds u32")));
        }
    }
    let elements: usize = shape.iter().product();
    let mut out = Vec::with_capacity(7 + 4 * shape.len() + elements * tensor.dtype_size());
    out.extend_from_slice(&FRAME_MAGIC);
    out.push(FRAME_VERSION);
    out.push(tensor.dtype_code());
    out.push(shape.len() as u8);
    for &d in shape {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    match tensor {
        FrameTensor::F32(a) => {
            for v in a.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        FrameTensor::U8(a) => out.extend(a.iter()),
        FrameTensor::U16(a) => {
            for v in a.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    Ok(out)
}

/// Parse frame bytes back into a tensor. Bit-exact inverse of `encode_frame`.
pub fn decode_frame(bytes: &[u8]) -> Result<FrameTensor> {
    if bytes.len() < 7 {
        return Err(Error::protocol(
            bytes.len(),
            format!("frame header needs 7 bytes, got {}", bytes.len()),
        ));
    }
    if bytes[..4] != FRAME_MAGIC {
        return Err(Error::protocol(
            0,
            format!("bad magic {:02x?}", &bytes[..4]),
        ));
    }
    if bytes[4] != FRAME_VERSION {
        return Err(Error::protocol(
            4,
            format!("unsupported version {}", bytes[4]),
        ));
    }
    let dtype = bytes[5];
    let dtype_size: usize = match dtype {
        0 => 4,
        1 => 1,
        2 => 2,
        other => return Err(Error::protocol(5, format!("unknown dtype code {other}"))),
    };
    let rank = bytes[6] as usize;
    if rank > MAX_RANK {
        return Err(Error::protocol(
            6,
            format!("rank {rank} exceeds the {MAX_RANK}-dim limit"),
        ));
    }
    let dims_end = 7 + 4 * rank;
    if bytes.len() < dims_end {
        return Err(Error::protocol(
            bytes.len(),
            format!("dim list truncated, frame needs {dims_end} header bytes"),
        ));
    }
    let mut dims = Vec::with_capacity(rank);
    for i in 0..rank {
        let at = 7 + 4 * i;
        let d = u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
        dims.push(d as usize);
    }
    let elements = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::protocol(7, "dim product overflows".to_string()))?;
    let payload_len = elements
        .checked_mul(dtype_size)
        .ok_or_else(|| Error::protocol(7, "payload size overflows".to_string()))?;
    let expected = dims_end + payload_len;
    if bytes.len() < expected {
        return Err(Error::protocol(
            bytes.len(),
            format!("payload truncated: frame needs {expected} bytes, got {}", bytes.len()),
        ));
    }
    if bytes.len() > expected {
        return Err(Error::protocol(
            expected,
            format!("{} trailing bytes after the payload", bytes.len() - expected),
        ));
    }
    let payload = &bytes[dims_end..];
    let shape = IxDyn(&dims);
    let tensor = match dtype {
        0 => {
            let data: Vec<f32> = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            FrameTensor::F32(ArrayD::from_shape_vec(shape, data).expect("len checked"))
        }
        1 => FrameTensor::U8(ArrayD::from_shape_vec(shape, payload.to_vec()).expect("len checked")),
        _ => {
            let data: Vec<u16> = payload
                .chunks_exact(2)
                .map(|c| u16::from_le_bytes(c.try_into().unwrap()))
                .collect();
            FrameTensor::U16(ArrayD::from_shape_vec(shape, data).expect("len checked"))
        }
    };
    Ok(tensor)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;
    use rand::Rng;

    fn bits_equal(a: &FrameTensor, b: &FrameTensor) -> bool {
        match (a, b) {
            (FrameTensor::F32(x), FrameTensor::F32(y)) => {
                x.shape() == y.shape()
                    && x.iter().zip(y.iter()).all(|(p, q)| p.to_bits() == q.to_bits())
            }
            (FrameTensor::U8(x), FrameTensor::U8(y)) => x == y,
            (FrameTensor::U16(x), FrameTensor::U16(y)) => x == y,
            _ => false,
        }
    }

    pub(crate) fn random_tensor(rng: &mut impl Rng) -> FrameTensor {
        let rank = rng.random_range(0..=4usize);
        let dims: Vec<usize> = (0..rank).map(|_| rng.random_range(1..5usize)).collect();
        let shape = IxDyn(&dims);
        match rng.random_range(0..3u8) {
            0 => FrameTensor::F32(ArrayD::from_shape_simple_fn(shape, || {
                f32::from_bits(rng.random::<u32>())
            })),
            1 => FrameTensor::U8(ArrayD::from_shape_simple_fn(shape, || rng.random())),
            _ => FrameTensor::U16(ArrayD::from_shape_simple_fn(shape, || rng.random())),
        }
    }

    #[test]
    fn layout_of_a_2x2_float_frame() {
        let t = FrameTensor::F32(
            ArrayD::from_shape_vec(IxDyn(&[2, 2]), vec![1.0f32, 2.0, 3.0, 4.0]).unwrap(),
        );
        let bytes = encode_frame(&t).unwrap();
        assert_eq!(bytes.len(), 31);
        assert_eq!(&bytes[..4], b"ADVL");
        assert_eq!(bytes[4], 1);
        assert_eq!(bytes[5], 0);
        assert_eq!(bytes[6], 2);
        assert_eq!(&bytes[7..11], &2u32.to_le_bytes());
        assert_eq!(&bytes[11..15], &2u32.to_le_bytes());
        assert_eq!(&bytes[15..19], &1.0f32.to_le_bytes());
    }

    #[test]
    fn round_trips_preserve_every_bit() {
        let mut rng = rng_from(41);
        for _ in 0..500 {
            let t = random_tensor(&mut rng);
            let decoded = decode_frame(&encode_frame(&t).unwrap()).unwrap();
            assert!(bits_equal(&t, &decoded), "{:?}", t.shape());
        }
    }

    #[test]
    fn corrupted_frames_fail_with_located_errors() {
        let t = FrameTensor::F32(
            ArrayD::from_shape_vec(IxDyn(&[2, 2]), vec![1.0f32, 2.0, 3.0, 4.0]).unwrap(),
        );
        let good = encode_frame(&t).unwrap();

        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        match decode_frame(&bad_magic) {
            Err(Error::Protocol { offset: 0, .. }) => {}
            other => panic!("{other:?}"),
        }

        let mut bad_version = good.clone();
        bad_version[4] = 9;
        match decode_frame(&bad_version) {
            Err(Error::Protocol { offset: 4, .. }) => {}
            other => panic!("{other:?}"),
        }

        let mut bad_dtype = good.clone();
        bad_dtype[5] = 7;
        match decode_frame(&bad_dtype) {
            Err(Error::Protocol { offset: 5, .. }) => {}
            other => panic!("{other:?}"),
        }

        let mut bad_rank = good.clone();
        bad_rank[6] = 9;
        match decode_frame(&bad_rank) {
            Err(Error::Protocol { offset: 6, .. }) => {}
            other => panic!("{other:?}"),
        }

        let truncated = &good[..good.len() - 3];
        match decode_frame(truncated) {
            Err(Error::Protocol { offset, .. }) => assert_eq!(offset, truncated.len()),
            other => panic!("{other:?}"),
        }

        let mut trailing = good.clone();
        trailing.push(0);
        match decode_frame(&trailing) {
            Err(Error::Protocol { offset, .. }) => assert_eq!(offset, good.len()),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn random_corruption_never_panics() {
        let mut rng = rng_from(42);
        for _ in 0..500 {
            let t = random_tensor(&mut rng);
            let mut bytes = encode_frame(&t).unwrap();
            match rng.random_range(0..3u8) {
                0 => {
                    let cut = rng.random_range(0..=bytes.len());
                    bytes.truncate(cut);
                }
                1 => {
                    if !bytes.is_empty() {
                        let at = rng.random_range(0..bytes.len());
                        bytes[at] ^= 1 << rng.random_range(0..8u8);
                    }
                }
                _ => {
                    bytes.extend((0..rng.random_range(1..5usize)).map(|_| rng.random::<u8>()));
                }
            }
            let _ = decode_frame(&bytes);
        }
    }

    #[test]
    fn oversized_shapes_are_rejected_at_encode() {
        let t = FrameTensor::U8(ArrayD::zeros(IxDyn(&[1; 9])));
        assert!(encode_frame(&t).is_err());
    }
}
