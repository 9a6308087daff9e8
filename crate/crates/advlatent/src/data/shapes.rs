//! 32x32 RGB shape/color classification. Every color is shared by two
//! shapes and every shape by two colors, so neither cue alone separates
//! the classes; a heavily compressed latent loses real information here.

use ndarray::Array4;
use rand::Rng;

use super::Dataset;
use crate::rng::rng_for;

#[derive(Debug, Clone, Copy)]
enum Shape {
    Circle,
    Square,
    Triangle,
    Cross,
    Ring,
}

const CLASSES: [(Shape, [f32; 3]); 10] = [
    (Shape::Circle, RED),
    (Shape::Square, RED),
    (Shape::Circle, GREEN),
    (Shape::Triangle, GREEN),
    (Shape::Square, BLUE),
    (Shape::Cross, BLUE),
    (Shape::Triangle, YELLOW),
    (Shape::Ring, YELLOW),
    (Shape::Cross, MAGENTA),
    (Shape::Ring, MAGENTA),
];

const RED: [f32; 3] = [0.85, 0.15, 0.15];
const GREEN: [f32; 3] = [0.15, 0.78, 0.2];
const BLUE: [f32; 3] = [0.2, 0.28, 0.88];
const YELLOW: [f32; 3] = [0.88, 0.82, 0.15];
const MAGENTA: [f32; 3] = [0.82, 0.18, 0.78];

fn sd_box(px: f32, py: f32, bx: f32, by: f32) -> f32 {
    (px.abs() - bx).max(py.abs() - by)
}

fn signed_distance(shape: Shape, px: f32, py: f32, r: f32) -> f32 {
    match shape {
        Shape::Circle => (px * px + py * py).sqrt() - r,
        Shape::Square => sd_box(px, py, r * 0.82, r * 0.82),
        Shape::Triangle => {
            let k = 3.0f32.sqrt();
            let mut x = px.abs() - r;
            let mut y = py + r / k;
            if x + k * y > 0.0 {
                let (nx, ny) = ((x - k * y) / 2.0, (-k * x - y) / 2.0);
                x = nx;
                y = ny;
            }
            x -= x.clamp(-2.0 * r, 0.0);
            -(x * x + y * y).sqrt() * y.signum()
        }
        Shape::Cross => sd_box(px, py, r, r * 0.34).min(sd_box(px, py, r * 0.34, r)),
        Shape::Ring => ((px * px + py * py).sqrt() - r * 0.8).abs() - r * 0.3,
    }
}

pub const SIDE: usize = 32;
pub const CHANNELS: usize = 3;
pub const NUM_CLASSES: usize = 10;

pub fn generate(seed: u64, first_index: usize, count: usize) -> Dataset {
    let mut images = Array4::zeros((count, CHANNELS, SIDE, SIDE));
    let mut labels = Vec::with_capacity(count);
    for i in 0..count {
        let index = first_index + i;
        let mut rng = rng_for(seed.wrapping_add(0x5eed), index as u64);
        let label = index % NUM_CLASSES;
        labels.push(label);
        let (shape, base_color) = CLASSES[label];

        let mut color = base_color;
        for c in &mut color {
            *c = (*c + rng.random_range(-0.08f32..0.08)).clamp(0.05, 1.0);
        }
        let cx = 16.0 + rng.random_range(-4.0f32..4.0);
        let cy = 16.0 + rng.random_range(-4.0f32..4.0);
        let r = rng.random_range(5.5f32..8.5);
        let angle = rng.random_range(-std::f32::consts::PI..std::f32::consts::PI);
        let (sin, cos) = angle.sin_cos();

        let bg: [f32; 3] = [
            rng.random_range(0.12f32..0.42),
            rng.random_range(0.12f32..0.42),
            rng.random_range(0.12f32..0.42),
        ];
        let grad_dir = rng.random_range(0.0f32..std::f32::consts::TAU);
        let grad_amp = rng.random_range(0.0f32..0.08);
        let (gsin, gcos) = grad_dir.sin_cos();

        // Neutral gray distractor blob: clutter without class information.
        let n_distract = rng.random_range(1usize..=2);
        let mut distractors = [(0.0f32, 0.0f32, 0.0f32, 0.0f32); 2];
        for d in distractors.iter_mut().take(n_distract) {
            *d = (
                rng.random_range(2.0f32..30.0),
                rng.random_range(2.0f32..30.0),
                rng.random_range(1.5f32..3.0),
                rng.random_range(0.35f32..0.6),
            );
        }
        let noise_amp = rng.random_range(0.01f32..0.04);

        for py in 0..SIDE {
            for px in 0..SIDE {
                let fx = px as f32 + 0.5;
                let fy = py as f32 + 0.5;
                let grad = grad_amp * ((fx - 16.0) * gcos + (fy - 16.0) * gsin) / 16.0;
                let mut pixel = [bg[0] + grad, bg[1] + grad, bg[2] + grad];
                for &(dx, dy, dr, dv) in distractors.iter().take(n_distract) {
                    let dd = ((fx - dx).powi(2) + (fy - dy).powi(2)).sqrt() - dr;
                    let alpha = (0.5 - dd / 1.2).clamp(0.0, 1.0);
                    for p in &mut pixel {
                        *p = *p * (1.0 - alpha) + dv * alpha;
                    }
                }
                let rx = cos * (fx - cx) + sin * (fy - cy);
                let ry = -sin * (fx - cx) + cos * (fy - cy);
                let d = signed_distance(shape, rx, ry, r);
                let alpha = (0.5 - d / 1.2).clamp(0.0, 1.0);
                for (p, c) in pixel.iter_mut().zip(color.iter()) {
                    *p = *p * (1.0 - alpha) + c * alpha;
                }
                for (ch, p) in pixel.iter().enumerate() {
                    let n: f32 = rng.random_range(-1.0..1.0) * noise_amp;
                    images[[i, ch, py, px]] = (p + n).clamp(0.0, 1.0);
                }
            }
        }
    }
    Dataset {
        images,
        labels,
        num_classes: NUM_CLASSES,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic_and_in_range() {
        let a = generate(3, 0, 20);
        let b = generate(3, 0, 20);
        assert_eq!(a.images, b.images);
        assert!(a.images.iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert_eq!(a.labels[13], 3);
    }

    #[test]
    fn object_color_dominates_center_region() {
        // With jittered centers, the class color should still show up near
        // the canvas middle far more often than chance.
        let d = generate(3, 0, 40);
        let mut hits = 0;
        for i in 0..40 {
            let label = d.labels[i];
            let (_, color) = CLASSES[label];
            let mut found = false;
            for py in 10..22 {
                for px in 10..22 {
                    let px_color = [
                        d.images[[i, 0, py, px]],
                        d.images[[i, 1, py, px]],
                        d.images[[i, 2, py, px]],
                    ];
                    let dist: f32 = px_color
                        .iter()
                        .zip(color.iter())
                        .map(|(a, b)| (a - b).abs())
                        .sum();
                    if dist < 0.35 {
                        found = true;
                    }
                }
            }
            if found {
                hits += 1;
            }
        }
        assert!(hits >= 32, "only {hits}/40 samples show their class color");
    }
}
