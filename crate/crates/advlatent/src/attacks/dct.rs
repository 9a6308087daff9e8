//! Two dimensional type-II discrete cosine transform, used to sample
//! perturbation directions concentrated in low spatial frequencies.

use ndarray::{Array2, Array4, Axis};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn basis(n: usize) -> Array2<f32> {
    let mut m = Array2::<f32>::zeros((n, n));
    let scale0 = (1.0 / n as f64).sqrt();
    let scale = (2.0 / n as f64).sqrt();
    for k in 0..n {
        for i in 0..n {
            let angle = std::f64::consts::PI * (i as f64 + 0.5) * k as f64 / n as f64;
            let s = if k == 0 { scale0 } else { scale };
            m[[k, i]] = (s * angle.cos()) as f32;
        }
    }
    m
}

/// Forward 2-D DCT-II of each (sample, channel) plane.
pub fn dct2(x: &Array4<f32>) -> Array4<f32> {
    let (n, c, h, w) = x.dim();
    let bh = basis(h);
    let bw = basis(w);
    let mut out = Array4::<f32>::zeros((n, c, h, w));
    for i in 0..n {
        for ch in 0..c {
            let plane = x.index_axis(Axis(0), i);
            let plane = plane.index_axis(Axis(0), ch);
            let coeffs = bh.dot(&plane).dot(&bw.t());
            out.index_axis_mut(Axis(0), i)
                .index_axis_mut(Axis(0), ch)
                .assign(&coeffs);
        }
    }
    out
}

/// Inverse of [`dct2`].
pub fn idct2(coeffs: &Array4<f32>) -> Array4<f32> {
    let (n, c, h, w) = coeffs.dim();
    let bh = basis(h);
    let bw = basis(w);
    let mut out = Array4::<f32>::zeros((n, c, h, w));
    for i in 0..n {
        for ch in 0..c {
            let plane = coeffs.index_axis(Axis(0), i);
            let plane = plane.index_axis(Axis(0), ch);
            let values = bh.t().dot(&plane).dot(&bw);
            out.index_axis_mut(Axis(0), i)
                .index_axis_mut(Axis(0), ch)
                .assign(&values);
        }
    }
    out
}

/// Gaussian direction whose spectrum lives in the lowest `frac` of
/// frequencies along each axis, normalized to unit l2 length.
pub fn low_frequency_direction(
    shape: (usize, usize, usize, usize),
    frac: f64,
    rng: &mut ChaCha8Rng,
) -> Array4<f32> {
    let (n, c, h, w) = shape;
    let kh = ((h as f64 * frac).ceil() as usize).clamp(1, h);
    let kw = ((w as f64 * frac).ceil() as usize).clamp(1, w);
    let mut coeffs = Array4::<f32>::zeros(shape);
    for i in 0..n {
        for ch in 0..c {
            for u in 0..kh {
                for v in 0..kw {
                    coeffs[[i, ch, u, v]] = StandardNormal.sample(rng);
                }
            }
        }
    }
    let mut direction = idct2(&coeffs);
    let norm = direction
        .iter()
        .map(|v| (*v as f64).powi(2))
        .sum::<f64>()
        .sqrt();
    if norm > 0.0 {
        direction.mapv_inplace(|v| (v as f64 / norm) as f32);
    }
    direction
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;

    fn max_abs_diff(a: &Array4<f32>, b: &Array4<f32>) -> f32 {
        a.iter()
            .zip(b.iter())
            .fold(0.0f32, |acc, (x, y)| acc.max((x - y).abs()))
    }

    #[test]
    fn transform_round_trips() {
        let mut rng = rng_from(5);
        let values: Vec<f32> = (0..2 * 3 * 8 * 8)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let x = Array4::from_shape_vec((2, 3, 8, 8), values).unwrap();
        let back = idct2(&dct2(&x));
        assert!(max_abs_diff(&x, &back) < 1e-4);
    }

    #[test]
    fn constant_plane_is_pure_dc() {
        let x = Array4::from_elem((1, 1, 4, 4), 2.0f32);
        let coeffs = dct2(&x);
        assert!((coeffs[[0, 0, 0, 0]] - 8.0).abs() < 1e-5);
        let rest: f32 = coeffs.iter().skip(1).map(|v| v.abs()).sum();
        assert!(rest < 1e-4);
    }

    #[test]
    fn smooth_images_compact_into_low_frequencies() {
        let h = 16;
        let x = Array4::from_shape_fn((1, 1, h, h), |(_, _, i, j)| (i + j) as f32 / (2 * h) as f32);
        let coeffs = dct2(&x);
        let total: f64 = coeffs.iter().map(|v| (*v as f64).powi(2)).sum();
        let low: f64 = coeffs
            .slice(ndarray::s![.., .., ..4, ..4])
            .iter()
            .map(|v| (*v as f64).powi(2))
            .sum();
        assert!(low / total > 0.95);
    }

    #[test]
    fn sampled_directions_are_unit_length_and_band_limited() {
        let mut rng = rng_from(9);
        let d = low_frequency_direction((1, 2, 12, 12), 0.25, &mut rng);
        let norm: f64 = d.iter().map(|v| (*v as f64).powi(2)).sum();
        assert!((norm - 1.0).abs() < 1e-5);
        let coeffs = dct2(&d);
        let high: f32 = coeffs
            .slice(ndarray::s![.., .., 3.., ..])
            .iter()
            .chain(coeffs.slice(ndarray::s![.., .., .., 3..]).iter())
            .map(|v| v.abs())
            .sum();
        assert!(high < 1e-3);
    }
}
