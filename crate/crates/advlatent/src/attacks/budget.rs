//! Perturbation budgets and norm-ball projection.
//!
//! A budget converts a scalar distortion allowance into an l_p radius:
//! l2 budgets are mean-square allowances (radius grows with the square
//! root of the element count), l-infinity budgets bound each element
//! directly.

use ndarray::Array4;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    L2,
    Linf,
}

impl std::str::FromStr for Norm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l2" => Ok(Norm::L2),
            "linf" => Ok(Norm::Linf),
            other => Err(Error::validation(format!(
                "unknown norm {other:?}, expected l2|linf"
            ))),
        }
    }
}

impl std::fmt::Display for Norm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Norm::L2 => "l2",
            Norm::Linf => "linf",
        })
    }
}

/// Where the perturbation lands: model input (box-constrained to [0,1])
/// or the transmitted latent (unconstrained values).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Space {
    Input,
    Latent,
}

impl std::str::FromStr for Space {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "input" => Ok(Space::Input),
            "latent" => Ok(Space::Latent),
            other => Err(Error::validation(format!(
                "unknown space {other:?}, expected input|latent"
            ))),
        }
    }
}

impl std::fmt::Display for Space {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Space::Input => "input",
            Space::Latent => "latent",
        })
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Budget {
    pub norm: Norm,
    pub epsilon: f64,
    pub space: Space,
    pub dim: usize,
    /// Derived l_p radius.
    pub sigma: f32,
}

impl Budget {
    pub fn new(norm: Norm, epsilon: f64, space: Space, dim: usize) -> Result<Budget> {
        if epsilon < 0.0 || !epsilon.is_finite() {
            return Err(Error::validation(format!(
                "epsilon {epsilon} must be finite and nonnegative"
            )));
        }
        if dim == 0 {
            return Err(Error::validation("attacked tensor has no elements".to_string()));
        }
        let sigma = match norm {
            Norm::L2 => (epsilon * dim as f64).sqrt() as f32,
            Norm::Linf => epsilon as f32,
        };
        Ok(Budget {
            norm,
            epsilon,
            space,
            dim,
            sigma,
        })
    }
}

pub fn budget_to_sigma(budget: &Budget) -> f32 {
    budget.sigma
}

const L2_SAFETY: f64 = 1.0 - 1e-6;

/// Project onto the sigma-ball of the given norm. The l2 branch rescales
/// with a hair of slack below the radius so a projected vector projects to
/// itself bit for bit.
pub fn project_lp(delta: &Array4<f32>, sigma: f32, norm: Norm) -> Array4<f32> {
    match norm {
        Norm::Linf => delta.mapv(|v| v.clamp(-sigma, sigma)),
        Norm::L2 => {
            let norm_sq: f64 = delta.iter().map(|&v| v as f64 * v as f64).sum();
            let l2 = norm_sq.sqrt();
            if l2 <= sigma as f64 {
                delta.clone()
            } else {
                let scale = sigma as f64 / l2 * L2_SAFETY;
                delta.mapv(|v| (v as f64 * scale) as f32)
            }
        }
    }
}

/// Perturbed tensor as the attacked pipeline sees it: the sum, clamped to
/// the unit box for input-space perturbations.
pub fn apply_delta(x: &Array4<f32>, delta: &Array4<f32>, space: Space) -> Array4<f32> {
    let mut adv = x + delta;
    if space == Space::Input {
        adv.mapv_inplace(|v| v.clamp(0.0, 1.0));
    }
    adv
}

pub fn lp_norm(delta: &Array4<f32>, norm: Norm) -> f32 {
    match norm {
        Norm::Linf => delta.iter().fold(0.0f32, |acc, &v| acc.max(v.abs())),
        Norm::L2 => delta
            .iter()
            .map(|&v| v as f64 * v as f64)
            .sum::<f64>()
            .sqrt() as f32,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;
    use rand::Rng;

    #[test]
    fn sigma_derivation_matches_hand_arithmetic() {
        let b = Budget::new(Norm::L2, 0.01, Space::Input, 784).unwrap();
        assert!((b.sigma - 2.8).abs() < 1e-6);
        let b = Budget::new(Norm::Linf, 0.05, Space::Latent, 12345).unwrap();
        assert_eq!(b.sigma, 0.05);
        let b = Budget::new(Norm::L2, 0.0, Space::Input, 64).unwrap();
        assert_eq!(b.sigma, 0.0);
        assert_eq!(budget_to_sigma(&b), 0.0);
    }

    #[test]
    fn bad_budgets_are_rejected() {
        assert!(Budget::new(Norm::L2, -0.1, Space::Input, 10).is_err());
        assert!(Budget::new(Norm::L2, f64::NAN, Space::Input, 10).is_err());
        assert!(Budget::new(Norm::L2, 0.1, Space::Input, 0).is_err());
    }

    #[test]
    fn linf_projection_clamps_elementwise() {
        let d = Array4::from_shape_vec((1, 1, 1, 2), vec![0.5f32, -0.2]).unwrap();
        let p = project_lp(&d, 0.3, Norm::Linf);
        assert_eq!(p.as_slice().unwrap(), &[0.3, -0.2]);
    }

    #[test]
    fn l2_projection_on_boundary_and_inside_is_identity() {
        let d = Array4::from_shape_vec((1, 1, 1, 2), vec![3.0f32, 4.0]).unwrap();
        let p = project_lp(&d, 5.0, Norm::L2);
        assert_eq!(p, d);
        let q = project_lp(&d, 2.5, Norm::L2);
        let s = q.as_slice().unwrap();
        assert!((s[0] - 1.5).abs() < 1e-5 && (s[1] - 2.0).abs() < 1e-5);
    }

    #[test]
    fn projection_is_idempotent_and_norm_bounded_en_masse() {
        let mut rng = rng_from(77);
        for case in 0..2_000 {
            let norm = if case % 2 == 0 { Norm::L2 } else { Norm::Linf };
            let sigma = rng.random_range(0.0f32..3.0);
            let d = Array4::from_shape_fn((1, 2, 3, 5), |_| rng.random_range(-4.0f32..4.0));
            let once = project_lp(&d, sigma, norm);
            let twice = project_lp(&once, sigma, norm);
            assert_eq!(once, twice, "case {case} not idempotent");
            assert!(
                lp_norm(&once, norm) <= sigma + 1e-5,
                "case {case} exceeds radius"
            );
        }
    }
}
