//! 28x28 grayscale digit glyphs: a 5x7 dot-matrix font rendered through a
//! random affine map with stroke, contrast, and noise jitter.

use ndarray::Array4;
use rand::Rng;

use super::Dataset;
use crate::rng::rng_for;

const GLYPHS: [[u8; 7]; 10] = [
    [0b01110, 0b10001, 0b10011, 0b10101, 0b11001, 0b10001, 0b01110],
    [0b00100, 0b01100, 0b00100, 0b00100, 0b00100, 0b00100, 0b01110],
    [0b01110, 0b10001, 0b00001, 0b00010, 0b00100, 0b01000, 0b11111],
    [0b11111, 0b00010, 0b00100, 0b00010, 0b00001, 0b10001, 0b01110],
    [0b00010, 0b00110, 0b01010, 0b10010, 0b11111, 0b00010, 0b00010],
    [0b11111, 0b10000, 0b11110, 0b00001, 0b00001, 0b10001, 0b01110],
    [0b00110, 0b01000, 0b10000, 0b11110, 0b10001, 0b10001, 0b01110],
    [0b11111, 0b00001, 0b00010, 0b00100, 0b01000, 0b01000, 0b01000],
    [0b01110, 0b10001, 0b10001, 0b01110, 0b10001, 0b10001, 0b01110],
    [0b01110, 0b10001, 0b10001, 0b01111, 0b00001, 0b00010, 0b01100],
];

fn cell(digit: usize, gx: f32, gy: f32) -> f32 {
    if !(0.0..5.0).contains(&gx) || !(0.0..7.0).contains(&gy) {
        return 0.0;
    }
    let row = GLYPHS[digit][gy as usize];
    if (row >> (4 - gx as usize)) & 1 == 1 {
        1.0
    } else {
        0.0
    }
}

/// Bilinear sample of the glyph bitmap at fractional grid coordinates,
/// treating each cell value as sitting at the cell center.
fn sample(digit: usize, gx: f32, gy: f32) -> f32 {
    let fx = gx - 0.5;
    let fy = gy - 0.5;
    let x0 = fx.floor();
    let y0 = fy.floor();
    let tx = fx - x0;
    let ty = fy - y0;
    let v00 = cell(digit, x0 + 0.5, y0 + 0.5);
    let v10 = cell(digit, x0 + 1.5, y0 + 0.5);
    let v01 = cell(digit, x0 + 0.5, y0 + 1.5);
    let v11 = cell(digit, x0 + 1.5, y0 + 1.5);
    v00 * (1.0 - tx) * (1.0 - ty) + v10 * tx * (1.0 - ty) + v01 * (1.0 - tx) * ty + v11 * tx * ty
}

pub const SIDE: usize = 28;
pub const CHANNELS: usize = 1;
pub const NUM_CLASSES: usize = 10;

/// Render samples `first_index..first_index + count`. Labels cycle through
/// the classes so every contiguous range is near-balanced.
pub fn generate(seed: u64, first_index: usize, count: usize) -> Dataset {
    let mut images = Array4::zeros((count, CHANNELS, SIDE, SIDE));
    let mut labels = Vec::with_capacity(count);
    for i in 0..count {
        let index = first_index + i;
        let mut rng = rng_for(seed, index as u64);
        let label = index % NUM_CLASSES;
        labels.push(label);

        let angle = rng.random_range(-0.20f32..0.20);
        let scale = rng.random_range(2.5f32..3.1);
        let cx = 14.0 + rng.random_range(-1.8f32..1.8);
        let cy = 14.0 + rng.random_range(-1.8f32..1.8);
        let shear = rng.random_range(-0.12f32..0.12);
        let intensity = rng.random_range(0.72f32..1.0);
        let noise = rng.random_range(0.02f32..0.06);
        let (sin, cos) = angle.sin_cos();

        for py in 0..SIDE {
            for px in 0..SIDE {
                let dx = px as f32 - cx;
                let dy = py as f32 - cy;
                let rx = (cos * dx + sin * dy) / scale;
                let ry = (-sin * dx + cos * dy) / scale;
                let gx = rx + shear * ry + 2.5;
                let gy = ry + 3.5;
                let v = sample(label, gx, gy) * intensity;
                let n: f32 = rng.random_range(-1.0..1.0) * noise;
                images[[i, 0, py, px]] = (v + n).clamp(0.0, 1.0);
            }
        }
    }
    Dataset {
        images,
        labels,
        num_classes: NUM_CLASSES,
    }
}
