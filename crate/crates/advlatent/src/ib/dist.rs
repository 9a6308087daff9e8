//! Dense finite distributions and the information quantities defined on them.
//!
//! Everything here is exact (up to f64 rounding): no sampling, no estimation.
//! All information quantities are returned in nats.

use ndarray::{ArrayD, ArrayViewD, Axis, IxDyn};

use crate::error::{Error, Result};

/// Probability-mass tolerance for validation.
pub const MASS_TOL: f64 = 1e-12;

/// Largest allowed support per variable; keeps dense tables small and exact.
pub const MAX_SUPPORT: usize = 16;

/// A dense joint distribution over one or more finite variables.
#[derive(Debug, Clone)]
pub struct FiniteDistribution {
    probs: ArrayD<f64>,
}

impl FiniteDistribution {
    /// Build from a flat row-major table. Validates mass, sign and size.
    pub fn new(support_sizes: &[usize], flat: Vec<f64>) -> Result<Self> {
        if support_sizes.is_empty() {
            return Err(Error::validation("distribution needs at least 1 variable"));
        }
        for &s in support_sizes {
            if s == 0 || s > MAX_SUPPORT {
                return Err(Error::validation(format!(
                    "support size {s} outside 1..={MAX_SUPPORT}"
                )));
            }
        }
        let expect: usize = support_sizes.iter().product();
        if flat.len() != expect {
            return Err(Error::validation(format!(
                "table has {} entries, support sizes imply {expect}",
                flat.len()
            )));
        }
        let probs = ArrayD::from_shape_vec(IxDyn(support_sizes), flat)
            .map_err(|e| Error::validation(e.to_string()))?;
        let dist = FiniteDistribution { probs };
        dist.validate()?;
        Ok(dist)
    }

    /// Wrap an already-shaped table.
    pub fn from_array(probs: ArrayD<f64>) -> Result<Self> {
        let dist = FiniteDistribution { probs };
        for &s in dist.probs.shape() {
            if s == 0 || s > MAX_SUPPORT {
                return Err(Error::validation(format!(
                    "support size {s} outside 1..={MAX_SUPPORT}"
                )));
            }
        }
        dist.validate()?;
        Ok(dist)
    }

    fn validate(&self) -> Result<()> {
        let mut sum = 0.0;
        for &p in self.probs.iter() {
            if p < 0.0 {
                return Err(Error::validation(format!("negative mass {p}")));
            }
            sum += p;
        }
        if (sum - 1.0).abs() > MASS_TOL {
            return Err(Error::validation(format!(
                "mass sums to {sum}, expected 1 within {MASS_TOL}"
            )));
        }
        Ok(())
    }

    pub fn num_vars(&self) -> usize {
        self.probs.ndim()
    }

    pub fn support_sizes(&self) -> &[usize] {
        self.probs.shape()
    }

    pub fn probs(&self) -> ArrayViewD<'_, f64> {
        self.probs.view()
    }

    /// Marginalize away every axis not listed in `keep` (order preserved).
    pub fn marginal(&self, keep: &[usize]) -> ArrayD<f64> {
        let mut out = self.probs.clone();
        // Drop axes from highest index down so positions stay valid.
        let mut drop: Vec<usize> = (0..self.probs.ndim()).filter(|a| !keep.contains(a)).collect();
        drop.sort_unstable_by(|a, b| b.cmp(a));
        for ax in drop {
            out = out.sum_axis(Axis(ax));
        }
        out
    }
}

/// Mutual information I(A;B) in nats of a 2-variable joint.
///
/// Uses the 0 ln 0 = 0 convention; result is clamped to be ≥ 0 only by the
/// mathematics, not numerically (tiny negative rounding is possible).
pub fn mutual_information(joint: &FiniteDistribution) -> Result<f64> {
    if joint.num_vars() != 2 {
        return Err(Error::validation(format!(
            "mutual_information needs a 2-variable joint, got {}",
            joint.num_vars()
        )));
    }
    let p = joint
        .probs
        .view()
        .into_dimensionality::<ndarray::Ix2>()
        .expect("checked ndim");
    let pa = p.sum_axis(Axis(1));
    let pb = p.sum_axis(Axis(0));
    let mut mi = 0.0;
    for a in 0..p.nrows() {
        for b in 0..p.ncols() {
            let pab = p[[a, b]];
            if pab > 0.0 {
                mi += pab * (pab / (pa[a] * pb[b])).ln();
            }
        }
    }
    Ok(mi)
}

/// Conditional mutual information I(X;Y|T) in nats of a 3-variable joint
/// with axes ordered (X, Y, T).
///
/// Zero-mass conditioning symbols contribute zero.
pub fn conditional_mutual_information(joint: &FiniteDistribution) -> Result<f64> {
    if joint.num_vars() != 3 {
        return Err(Error::validation(format!(
            "conditional_mutual_information needs a 3-variable joint, got {}",
            joint.num_vars()
        )));
    }
    let p = joint
        .probs
        .view()
        .into_dimensionality::<ndarray::Ix3>()
        .expect("checked ndim");
    let (nx, ny, nt) = p.dim();
    // I(X;Y|T) = sum p(x,y,t) ln [ p(x,y,t) p(t) / (p(x,t) p(y,t)) ]
    let p_t = {
        let mut v = vec![0.0; nt];
        for x in 0..nx {
            for y in 0..ny {
                for t in 0..nt {
                    v[t] += p[[x, y, t]];
                }
            }
        }
        v
    };
    let mut p_xt = vec![0.0; nx * nt];
    let mut p_yt = vec![0.0; ny * nt];
    for x in 0..nx {
        for y in 0..ny {
            for t in 0..nt {
                p_xt[x * nt + t] += p[[x, y, t]];
                p_yt[y * nt + t] += p[[x, y, t]];
            }
        }
    }
    let mut cmi = 0.0;
    for t in 0..nt {
        if p_t[t] <= 0.0 {
            continue;
        }
        for x in 0..nx {
            for y in 0..ny {
                let pxyt = p[[x, y, t]];
                if pxyt > 0.0 {
                    cmi += pxyt * (pxyt * p_t[t] / (p_xt[x * nt + t] * p_yt[y * nt + t])).ln();
                }
            }
        }
    }
    Ok(cmi)
}

/// I((X,T);Y) of a 3-variable joint with axes (X, Y, T): the pair (X,T) is
/// treated as a single variable.
pub fn grouped_mutual_information_xt_y(joint: &FiniteDistribution) -> Result<f64> {
    if joint.num_vars() != 3 {
        return Err(Error::validation("needs a 3-variable joint".to_string()));
    }
    let p = joint
        .probs
        .view()
        .into_dimensionality::<ndarray::Ix3>()
        .expect("checked ndim");
    let (nx, ny, nt) = p.dim();
    let mut flat = vec![0.0; nx * nt * ny];
    for x in 0..nx {
        for y in 0..ny {
            for t in 0..nt {
                flat[(x * nt + t) * ny + y] = p[[x, y, t]];
            }
        }
    }
    // (X,T) may exceed the per-variable support cap; bypass the constructor
    // and reuse the 2-D kernel directly.
    let pa: Vec<f64> = (0..nx * nt)
        .map(|i| flat[i * ny..(i + 1) * ny].iter().sum())
        .collect();
    let mut pb = vec![0.0; ny];
    for i in 0..nx * nt {
        for y in 0..ny {
            pb[y] += flat[i * ny + y];
        }
    }
    let mut mi = 0.0;
    for i in 0..nx * nt {
        for y in 0..ny {
            let pab = flat[i * ny + y];
            if pab > 0.0 {
                mi += pab * (pab / (pa[i] * pb[y])).ln();
            }
        }
    }
    Ok(mi)
}
