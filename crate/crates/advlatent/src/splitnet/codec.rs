//! Latent compression: uniform quantization, a JPEG mosaic path, and
//! quantization followed by lossless arithmetic coding.

use ndarray::Array4;
use serde::{Deserialize, Serialize};

use super::arith::{entropy_decode, entropy_encode};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CodecKind {
    Qt,
    Jc,
    Entropy,
}

impl std::fmt::Display for CodecKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            CodecKind::Qt => "qt",
            CodecKind::Jc => "jc",
            CodecKind::Entropy => "entropy",
        })
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CompressionCodec {
    pub kind: CodecKind,
    /// Quantization bit width, used by QT and ENTROPY.
    pub bits: u8,
    /// JPEG quality factor 1..=100, used by JC.
    pub quality: u8,
    /// Calibrated (min, max) of the transmitted latent.
    pub value_range: (f32, f32),
}

impl CompressionCodec {
    pub fn qt(bits: u8) -> Self {
        CompressionCodec {
            kind: CodecKind::Qt,
            bits,
            quality: 75,
            value_range: (0.0, 1.0),
        }
    }

    pub fn jc(quality: u8) -> Self {
        CompressionCodec {
            kind: CodecKind::Jc,
            bits: 8,
            quality,
            value_range: (0.0, 1.0),
        }
    }

    pub fn entropy(bits: u8) -> Self {
        CompressionCodec {
            kind: CodecKind::Entropy,
            bits,
            quality: 75,
            value_range: (0.0, 1.0),
        }
    }

    /// Parse the CLI form `qt:8`, `jc:75`, or `entropy:8`.
    pub fn from_cli_spec(spec: &str) -> Result<Self> {
        let (kind, param) = spec
            .split_once(':')
            .ok_or_else(|| Error::validation(format!("codec spec {spec:?}, expected kind:param")))?;
        let value: u8 = param
            .parse()
            .map_err(|_| Error::validation(format!("codec parameter {param:?} is not a small integer")))?;
        let codec = match kind {
            "qt" => CompressionCodec::qt(value),
            "jc" => CompressionCodec::jc(value),
            "entropy" => CompressionCodec::entropy(value),
            other => {
                return Err(Error::validation(format!(
                    "unknown codec {other:?}, expected qt|jc|entropy"
                )))
            }
        };
        codec.validate()?;
        Ok(codec)
    }

    pub fn cli_spec(&self) -> String {
        match self.kind {
            CodecKind::Qt => format!("qt:{}", self.bits),
            CodecKind::Jc => format!("jc:{}", self.quality),
            CodecKind::Entropy => format!("entropy:{}", self.bits),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            CodecKind::Qt | CodecKind::Entropy => {
                if self.bits < 1 || self.bits > 16 {
                    return Err(Error::validation(format!(
                        "bit width {} out of range 1..=16",
                        self.bits
                    )));
                }
            }
            CodecKind::Jc => {
                if self.quality < 1 || self.quality > 100 {
                    return Err(Error::validation(format!(
                        "JPEG quality {} out of range 1..=100",
                        self.quality
                    )));
                }
            }
        }
        if !(self.value_range.0 < self.value_range.1) {
            return Err(Error::validation(format!(
                "degenerate value range ({}, {})",
                self.value_range.0, self.value_range.1
            )));
        }
        Ok(())
    }

    pub fn encode(&self, t: &Array4<f32>) -> Result<Vec<u8>> {
        self.validate()?;
        match self.kind {
            CodecKind::Qt => {
                let codes = quantize_latent(t, self.bits, self.value_range)?;
                Ok(pack_codes(&codes, self.bits))
            }
            CodecKind::Jc => jpeg_code_latent(t, self.quality),
            CodecKind::Entropy => entropy_code_latent(t, self.bits, self.value_range),
        }
    }

    pub fn decode(&self, bytes: &[u8], shape: (usize, usize, usize, usize)) -> Result<Array4<f32>> {
        self.validate()?;
        match self.kind {
            CodecKind::Qt => {
                let codes = unpack_codes(bytes, self.bits, shape)?;
                dequantize_latent(&codes, self.bits, self.value_range)
            }
            CodecKind::Jc => jpeg_decode_latent(bytes, shape),
            CodecKind::Entropy => entropy_decode_latent(bytes, self.bits, self.value_range, shape),
        }
    }

    /// Reconstruction as the receiver sees it.
    pub fn round_trip(&self, t: &Array4<f32>) -> Result<Array4<f32>> {
        self.decode(&self.encode(t)?, t.dim())
    }
}

fn check_quant_args(bits: u8, value_range: (f32, f32)) -> Result<()> {
    if bits < 1 || bits > 16 {
        return Err(Error::validation(format!("bit width {bits} out of range 1..=16")));
    }
    if !(value_range.0 < value_range.1) {
        return Err(Error::validation(format!(
            "degenerate value range ({}, {})",
            value_range.0, value_range.1
        )));
    }
    Ok(())
}

/// Uniform quantization to `2^bits` code points spanning the range.
/// Out-of-range values clamp to the range first.
pub fn quantize_latent(t: &Array4<f32>, bits: u8, value_range: (f32, f32)) -> Result<Array4<u16>> {
    check_quant_args(bits, value_range)?;
    let (min, max) = value_range;
    let max_code = ((1u32 << bits) - 1) as f32;
    let scale = max_code / (max - min);
    Ok(t.mapv(|v| {
        let clamped = v.clamp(min, max);
        ((clamped - min) * scale).round() as u16
    }))
}

pub fn dequantize_latent(codes: &Array4<u16>, bits: u8, value_range: (f32, f32)) -> Result<Array4<f32>> {
    check_quant_args(bits, value_range)?;
    let (min, max) = value_range;
    let max_code = ((1u32 << bits) - 1) as f32;
    let step = (max - min) / max_code;
    let ceiling = (1u32 << bits) as u32;
    if let Some(bad) = codes.iter().find(|&&c| (c as u32) >= ceiling) {
        return Err(Error::validation(format!(
            "code {bad} does not fit in {bits} bits"
        )));
    }
    Ok(codes.mapv(|c| min + c as f32 * step))
}

fn pack_codes(codes: &Array4<u16>, bits: u8) -> Vec<u8> {
    if bits <= 8 {
        codes.iter().map(|&c| c as u8).collect()
    } else {
        let mut out = Vec::with_capacity(codes.len() * 2);
        for &c in codes.iter() {
            out.extend_from_slice(&c.to_le_bytes());
        }
        out
    }
}

fn unpack_codes(bytes: &[u8], bits: u8, shape: (usize, usize, usize, usize)) -> Result<Array4<u16>> {
    let count = shape.0 * shape.1 * shape.2 * shape.3;
    let expected = if bits <= 8 { count } else { count * 2 };
    if bytes.len() != expected {
        return Err(Error::validation(format!(
            "payload of {} bytes, expected {expected} for shape {shape:?} at {bits} bits",
            bytes.len()
        )));
    }
    let flat: Vec<u16> = if bits <= 8 {
        bytes.iter().map(|&b| b as u16).collect()
    } else {
        bytes
            .chunks_exact(2)
            .map(|c| u16::from_le_bytes([c[0], c[1]]))
            .collect()
    };
    Array4::from_shape_vec(shape, flat)
        .map_err(|e| Error::validation(format!("code payload does not fit shape: {e}")))
}

fn mosaic_grid(channels: usize) -> (usize, usize) {
    let cols = (channels as f64).sqrt().ceil() as usize;
    let rows = channels.div_ceil(cols);
    (rows, cols)
}

/// One grayscale JPEG per sample: channels tiled into a mosaic, the whole
/// tensor min-max scaled to 8 bits. Layout: min f32, max f32, then a
/// length-prefixed JPEG per sample.
pub fn jpeg_code_latent(t: &Array4<f32>, quality: u8) -> Result<Vec<u8>> {
    if quality < 1 || quality > 100 {
        return Err(Error::validation(format!(
            "JPEG quality {quality} out of range 1..=100"
        )));
    }
    let (n, c, h, w) = t.dim();
    if n == 0 || c == 0 || h == 0 || w == 0 {
        return Err(Error::validation("empty latent".to_string()));
    }
    let mut lo = f32::INFINITY;
    let mut hi = f32::NEG_INFINITY;
    for &v in t.iter() {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let span = hi - lo;
    let scale = if span > 1e-12 { 255.0 / span } else { 0.0 };
    let (rows, cols) = mosaic_grid(c);
    let (img_h, img_w) = (rows * h, cols * w);
    let mut out = Vec::new();
    out.extend_from_slice(&lo.to_le_bytes());
    out.extend_from_slice(&hi.to_le_bytes());
    for ni in 0..n {
        let mut pixels = vec![0u8; img_h * img_w];
        for ci in 0..c {
            let (ty, tx) = (ci / cols, ci % cols);
            for y in 0..h {
                for x in 0..w {
                    let v = t[(ni, ci, y, x)];
                    pixels[(ty * h + y) * img_w + tx * w + x] =
                        ((v - lo) * scale).round().clamp(0.0, 255.0) as u8;
                }
            }
        }
        let mut jpeg = Vec::new();
        image::codecs::jpeg::JpegEncoder::new_with_quality(&mut jpeg, quality)
            .encode(&pixels, img_w as u32, img_h as u32, image::ExtendedColorType::L8)
            .map_err(|e| Error::validation(format!("JPEG encode failed: {e}")))?;
        out.extend_from_slice(&(jpeg.len() as u32).to_le_bytes());
        out.extend_from_slice(&jpeg);
    }
    Ok(out)
}

pub fn jpeg_decode_latent(bytes: &[u8], shape: (usize, usize, usize, usize)) -> Result<Array4<f32>> {
    let (n, c, h, w) = shape;
    if bytes.len() < 8 {
        return Err(Error::validation("JPEG payload truncated".to_string()));
    }
    let lo = f32::from_le_bytes(bytes[0..4].try_into().expect("4 bytes"));
    let hi = f32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    let span = hi - lo;
    let (rows, cols) = mosaic_grid(c);
    let (img_h, img_w) = (rows * h, cols * w);
    let mut t = Array4::zeros(shape);
    let mut cursor = 8usize;
    for ni in 0..n {
        if cursor + 4 > bytes.len() {
            return Err(Error::validation("JPEG payload truncated".to_string()));
        }
        let len = u32::from_le_bytes(bytes[cursor..cursor + 4].try_into().expect("4 bytes")) as usize;
        cursor += 4;
        if cursor + len > bytes.len() {
            return Err(Error::validation("JPEG payload truncated".to_string()));
        }
        let img = image::load_from_memory(&bytes[cursor..cursor + len])
            .map_err(|e| Error::validation(format!("JPEG decode failed: {e}")))?
            .to_luma8();
        cursor += len;
        if (img.width() as usize, img.height() as usize) != (img_w, img_h) {
            return Err(Error::validation(format!(
                "mosaic of {}x{}, expected {img_w}x{img_h}",
                img.width(),
                img.height()
            )));
        }
        for ci in 0..c {
            let (ty, tx) = (ci / cols, ci % cols);
            for y in 0..h {
                for x in 0..w {
                    let p = img.get_pixel((tx * w + x) as u32, (ty * h + y) as u32)[0];
                    t[(ni, ci, y, x)] = lo + p as f32 / 255.0 * span;
                }
            }
        }
    }
    if cursor != bytes.len() {
        return Err(Error::validation("trailing bytes after JPEG payload".to_string()));
    }
    Ok(t)
}

/// Quantize, then arithmetic-code the symbol stream. Lossless over the
/// quantized codes, so reconstruction matches the plain quantization path
/// bit for bit.
pub fn entropy_code_latent(t: &Array4<f32>, bits: u8, value_range: (f32, f32)) -> Result<Vec<u8>> {
    let codes = quantize_latent(t, bits, value_range)?;
    let symbols: Vec<u16> = codes.iter().copied().collect();
    entropy_encode(&symbols, 1usize << bits)
}

pub fn entropy_decode_latent(
    bytes: &[u8],
    bits: u8,
    value_range: (f32, f32),
    shape: (usize, usize, usize, usize),
) -> Result<Array4<f32>> {
    check_quant_args(bits, value_range)?;
    let count = shape.0 * shape.1 * shape.2 * shape.3;
    let symbols = entropy_decode(bytes, 1usize << bits, count)?;
    let codes = Array4::from_shape_vec(shape, symbols)
        .map_err(|e| Error::validation(format!("decoded stream does not fit shape: {e}")))?;
    dequantize_latent(&codes, bits, value_range)
}
