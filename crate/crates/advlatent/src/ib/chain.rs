//! Finite Markov chains Y -> X -> T and the chain-level information laws.

use ndarray::{Array1, Array2, ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use super::dist::{
    conditional_mutual_information, grouped_mutual_information_xt_y, mutual_information,
    FiniteDistribution, MASS_TOL, MAX_SUPPORT,
};
use crate::error::{Error, Result};

fn check_stochastic(name: &str, m: &Array2<f64>) -> Result<()> {
    if m.nrows() == 0 || m.ncols() == 0 || m.ncols() > MAX_SUPPORT || m.nrows() > MAX_SUPPORT {
        return Err(Error::validation(format!(
            "{name}: dimensions {}x{} outside 1..={MAX_SUPPORT}",
            m.nrows(),
            m.ncols()
        )));
    }
    for (i, row) in m.rows().into_iter().enumerate() {
        let mut sum = 0.0;
        for &v in row {
            if v < 0.0 {
                return Err(Error::validation(format!("{name}: negative entry in row {i}")));
            }
            sum += v;
        }
        if (sum - 1.0).abs() > MASS_TOL {
            return Err(Error::validation(format!(
                "{name}: row {i} sums to {sum}, expected 1 within {MASS_TOL}"
            )));
        }
    }
    Ok(())
}

/// A chain Y -> X -> T given by its prior and two row-stochastic channels.
#[derive(Debug, Clone)]
pub struct FiniteMarkovChain {
    prior_y: Array1<f64>,
    channel_x_given_y: Array2<f64>,
    channel_t_given_x: Array2<f64>,
}

impl FiniteMarkovChain {
    pub fn new(
        prior_y: Array1<f64>,
        channel_x_given_y: Array2<f64>,
        channel_t_given_x: Array2<f64>,
    ) -> Result<Self> {
        if prior_y.is_empty() || prior_y.len() > MAX_SUPPORT {
            return Err(Error::validation(format!(
                "prior: support {} outside 1..={MAX_SUPPORT}",
                prior_y.len()
            )));
        }
        let mut sum = 0.0;
        for &p in prior_y.iter() {
            if p < 0.0 {
                return Err(Error::validation("prior: negative mass"));
            }
            sum += p;
        }
        if (sum - 1.0).abs() > MASS_TOL {
            return Err(Error::validation(format!("prior sums to {sum}")));
        }
        check_stochastic("channel_x_given_y", &channel_x_given_y)?;
        check_stochastic("channel_t_given_x", &channel_t_given_x)?;
        if channel_x_given_y.nrows() != prior_y.len() {
            return Err(Error::validation(
                "channel_x_given_y rows must match |Y|".to_string(),
            ));
        }
        if channel_t_given_x.nrows() != channel_x_given_y.ncols() {
            return Err(Error::validation(
                "channel_t_given_x rows must match |X|".to_string(),
            ));
        }
        Ok(FiniteMarkovChain {
            prior_y,
            channel_x_given_y,
            channel_t_given_x,
        })
    }

    pub fn card_y(&self) -> usize {
        self.prior_y.len()
    }

    pub fn card_x(&self) -> usize {
        self.channel_x_given_y.ncols()
    }

    pub fn card_t(&self) -> usize {
        self.channel_t_given_x.ncols()
    }

    pub fn prior_y(&self) -> &Array1<f64> {
        &self.prior_y
    }

    pub fn channel_x_given_y(&self) -> &Array2<f64> {
        &self.channel_x_given_y
    }

    pub fn channel_t_given_x(&self) -> &Array2<f64> {
        &self.channel_t_given_x
    }

    /// Chain with the X-side channel post-composed with a perturbation kernel:
    /// Y -> X_adv -> T where P(x_adv|y) = sum_x P(x|y) K(x_adv|x).
    pub fn perturb_x(&self, kernel: &PerturbationKernel) -> Result<FiniteMarkovChain> {
        if kernel.transition.nrows() != self.card_x() {
            return Err(Error::validation("kernel support must match |X|"));
        }
        FiniteMarkovChain::new(
            self.prior_y.clone(),
            self.channel_x_given_y.dot(&kernel.transition),
            self.channel_t_given_x.clone(),
        )
    }

    /// Chain with the T-side channel post-composed with a perturbation kernel:
    /// Y -> X -> T_adv where P(t_adv|x) = sum_t P(t|x) K(t_adv|t).
    pub fn perturb_t(&self, kernel: &PerturbationKernel) -> Result<FiniteMarkovChain> {
        if kernel.transition.nrows() != self.card_t() {
            return Err(Error::validation("kernel support must match |T|"));
        }
        FiniteMarkovChain::new(
            self.prior_y.clone(),
            self.channel_x_given_y.clone(),
            self.channel_t_given_x.dot(&kernel.transition),
        )
    }

    /// Induced joint P(x,y,t) = P(y) P(x|y) P(t|x) with axes (X, Y, T).
    pub fn joint_xyt(&self) -> FiniteDistribution {
        let (ny, nx, nt) = (self.card_y(), self.card_x(), self.card_t());
        let mut table = ArrayD::zeros(IxDyn(&[nx, ny, nt]));
        for y in 0..ny {
            let py = self.prior_y[y];
            if py == 0.0 {
                continue;
            }
            for x in 0..nx {
                let pxy = py * self.channel_x_given_y[[y, x]];
                if pxy == 0.0 {
                    continue;
                }
                for t in 0..nt {
                    table[[x, y, t]] = pxy * self.channel_t_given_x[[x, t]];
                }
            }
        }
        FiniteDistribution::from_array(table).expect("chain joint is valid by construction")
    }

    /// Marginal joint over (A,B) where axes name chain variables.
    fn pair_marginal(&self, axes: [usize; 2]) -> FiniteDistribution {
        let j = self.joint_xyt();
        let m = j.marginal(&axes);
        FiniteDistribution::from_array(m).expect("marginal of valid joint is valid")
    }

    /// I(X;Y) of the induced joint.
    pub fn i_xy(&self) -> f64 {
        mutual_information(&self.pair_marginal([0, 1])).expect("2-variable by construction")
    }

    /// I(Y;T) of the induced joint.
    pub fn i_yt(&self) -> f64 {
        mutual_information(&self.pair_marginal([1, 2])).expect("2-variable by construction")
    }

    /// I(X;Y|T) of the induced joint.
    pub fn i_xy_given_t(&self) -> f64 {
        conditional_mutual_information(&self.joint_xyt()).expect("3-variable by construction")
    }

    /// I((X,T);Y) of the induced joint. Equals I(X;Y) for a Markov chain.
    pub fn i_xt_y(&self) -> f64 {
        grouped_mutual_information_xt_y(&self.joint_xyt()).expect("3-variable by construction")
    }
}

/// Expected KL divergence E_{X,T}[ D_KL(P(Y|X) || P(Y|T)) ] in nats.
///
/// Equals I(X;Y|T) of the induced joint. Returns +inf when some P(y|t) is
/// zero on a (y,x,t) cell that carries mass; full-support T-channels never
/// trigger this.
pub fn expected_kl(chain: &FiniteMarkovChain) -> f64 {
    let (ny, nx, nt) = (chain.card_y(), chain.card_x(), chain.card_t());
    // P(x) and P(x,t) = P(x) P(t|x); P(y|x) via Bayes from prior and channel.
    let mut p_x = vec![0.0; nx];
    for y in 0..ny {
        for x in 0..nx {
            p_x[x] += chain.prior_y()[y] * chain.channel_x_given_y()[[y, x]];
        }
    }
    // P(y|x)
    let mut p_y_given_x = vec![0.0; nx * ny];
    for x in 0..nx {
        if p_x[x] == 0.0 {
            continue;
        }
        for y in 0..ny {
            p_y_given_x[x * ny + y] =
                chain.prior_y()[y] * chain.channel_x_given_y()[[y, x]] / p_x[x];
        }
    }
    // P(t) and P(y,t) for P(y|t)
    let mut p_t = vec![0.0; nt];
    let mut p_yt = vec![0.0; ny * nt];
    for x in 0..nx {
        for t in 0..nt {
            let pxt = p_x[x] * chain.channel_t_given_x()[[x, t]];
            p_t[t] += pxt;
            for y in 0..ny {
                p_yt[y * nt + t] += pxt * p_y_given_x[x * ny + y];
            }
        }
    }
    let mut ekl = 0.0;
    for x in 0..nx {
        for t in 0..nt {
            let pxt = p_x[x] * chain.channel_t_given_x()[[x, t]];
            if pxt == 0.0 {
                continue;
            }
            for y in 0..ny {
                let pyx = p_y_given_x[x * ny + y];
                if pyx == 0.0 {
                    continue;
                }
                let pyt = if p_t[t] > 0.0 { p_yt[y * nt + t] / p_t[t] } else { 0.0 };
                if pyt == 0.0 {
                    return f64::INFINITY;
                }
                ekl += pxt * pyx * (pyx / pyt).ln();
            }
        }
    }
    ekl
}

/// Residual information I(X;Y) - I(Y;T); equals I(X;Y|T) for a Markov chain.
pub fn residual_information(chain: &FiniteMarkovChain) -> f64 {
    chain.i_xy() - chain.i_yt()
}

/// Data-processing inequality report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DpiReport {
    pub i_xy: f64,
    pub i_yt: f64,
    pub holds: bool,
}

/// Check I(Y;X) >= I(Y;T) - 1e-9 on the induced joint.
pub fn verify_dpi(chain: &FiniteMarkovChain) -> DpiReport {
    let i_xy = chain.i_xy();
    let i_yt = chain.i_yt();
    DpiReport {
        i_xy,
        i_yt,
        holds: i_xy >= i_yt - 1e-9,
    }
}

/// The dimensionality comparator |T||Y|/sqrt(n). The hidden constant of the
/// underlying error bound is not estimated; this is a descriptive index only.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BoundIndex {
    pub card_t: usize,
    pub card_y: usize,
    pub n: usize,
    pub value: f64,
}

pub fn theorem1_bound_index(card_t: usize, card_y: usize, n: usize) -> Result<BoundIndex> {
    if card_t == 0 || card_y == 0 || n == 0 {
        return Err(Error::validation("bound index needs all arguments >= 1"));
    }
    Ok(BoundIndex {
        card_t,
        card_y,
        n,
        value: (card_t as f64) * (card_y as f64) / (n as f64).sqrt(),
    })
}

/// The bottleneck objective I(X;T) - beta * I(Y;T).
pub fn ib_objective(i_xt: f64, i_yt: f64, beta: f64) -> Result<f64> {
    if i_xt < 0.0 || i_yt < 0.0 {
        return Err(Error::validation("information terms must be nonnegative"));
    }
    Ok(i_xt - beta * i_yt)
}

/// Which chain variable a perturbation kernel acts on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KernelTarget {
    Input,
    Latent,
}

/// A stochastic map from clean symbol to perturbed symbol.
#[derive(Debug, Clone)]
pub struct PerturbationKernel {
    pub target: KernelTarget,
    pub noise_level: f64,
    pub transition: Array2<f64>,
}

impl PerturbationKernel {
    pub fn new(target: KernelTarget, noise_level: f64, transition: Array2<f64>) -> Result<Self> {
        if noise_level < 0.0 {
            return Err(Error::validation("noise_level must be >= 0"));
        }
        if transition.nrows() != transition.ncols() {
            return Err(Error::validation("kernel transition must be square"));
        }
        check_stochastic("kernel", &transition)?;
        if noise_level == 0.0 {
            for i in 0..transition.nrows() {
                for j in 0..transition.ncols() {
                    let want = if i == j { 1.0 } else { 0.0 };
                    if (transition[[i, j]] - want).abs() > MASS_TOL {
                        return Err(Error::validation(
                            "noise_level 0 requires the identity transition",
                        ));
                    }
                }
            }
        }
        Ok(PerturbationKernel {
            target,
            noise_level,
            transition,
        })
    }
}

/// A family of kernels indexed by a noise level in [0, 1].
pub trait KernelFamily {
    /// Build the transition matrix on a `support`-symbol alphabet.
    fn kernel(&self, target: KernelTarget, support: usize, noise_level: f64)
        -> Result<PerturbationKernel>;
}

/// With probability `noise_level` the symbol is resampled uniformly
/// (the fresh draw may coincide with the original), otherwise kept.
/// Distortion is monotone in the noise level, which makes bisection safe.
#[derive(Debug, Clone, Copy, Default)]
pub struct SymmetricNoise;

impl KernelFamily for SymmetricNoise {
    fn kernel(
        &self,
        target: KernelTarget,
        support: usize,
        noise_level: f64,
    ) -> Result<PerturbationKernel> {
        if !(0.0..=1.0).contains(&noise_level) {
            return Err(Error::validation("noise_level must lie in [0,1]"));
        }
        let k = support as f64;
        let mut m = Array2::from_elem((support, support), noise_level / k);
        for i in 0..support {
            m[[i, i]] += 1.0 - noise_level;
        }
        PerturbationKernel::new(target, noise_level, m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    pub(crate) fn copy_channel(n: usize) -> Array2<f64> {
        Array2::from_shape_fn((n, n), |(i, j)| if i == j { 1.0 } else { 0.0 })
    }

    #[test]
    fn joint_factorizes_as_markov() {
        let chain = FiniteMarkovChain::new(
            array![0.3, 0.7],
            array![[0.9, 0.1], [0.2, 0.8]],
            array![[0.6, 0.4], [0.25, 0.75]],
        )
        .unwrap();
        let j = chain.joint_xyt();
        let p = j.probs();
        for x in 0..2 {
            for y in 0..2 {
                for t in 0..2 {
                    let expect = chain.prior_y()[y]
                        * chain.channel_x_given_y()[[y, x]]
                        * chain.channel_t_given_x()[[x, t]];
                    assert!((p[[x, y, t]] - expect).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn expected_kl_zero_for_copy_channel() {
        let chain = FiniteMarkovChain::new(
            array![0.5, 0.5],
            array![[0.8, 0.2], [0.3, 0.7]],
            copy_channel(2),
        )
        .unwrap();
        assert!(expected_kl(&chain).abs() < 1e-12);
        assert!(chain.i_xy_given_t().abs() < 1e-12);
    }

    #[test]
    fn expected_kl_for_constant_t_is_i_xy() {
        // Y = X uniform binary through a perfect channel, T constant:
        // the full ln 2 of information is lost in transmission.
        let chain = FiniteMarkovChain::new(
            array![0.5, 0.5],
            copy_channel(2),
            array![[1.0], [1.0]],
        )
        .unwrap();
        let ekl = expected_kl(&chain);
        assert!((ekl - std::f64::consts::LN_2).abs() < 1e-12, "ekl = {ekl}");
    }

    #[test]
    fn dpi_equality_for_copy_and_constant() {
        let base = FiniteMarkovChain::new(
            array![0.4, 0.6],
            array![[0.85, 0.15], [0.1, 0.9]],
            copy_channel(2),
        )
        .unwrap();
        let rep = verify_dpi(&base);
        assert!(rep.holds);
        assert!((rep.i_xy - rep.i_yt).abs() < 1e-12);

        let constant = FiniteMarkovChain::new(
            array![0.4, 0.6],
            array![[0.85, 0.15], [0.1, 0.9]],
            array![[1.0], [1.0]],
        )
        .unwrap();
        let rep = verify_dpi(&constant);
        assert!(rep.holds);
        assert!(rep.i_yt.abs() < 1e-12);
    }

    #[test]
    fn residual_matches_conditional_mi_on_random_chains() {
        let mut rng = crate::rng::rng_from(11);
        for _ in 0..200 {
            let chain = super::super::campaign::random_chain(&mut rng, 8);
            let lhs = residual_information(&chain);
            let cmi = chain.i_xy_given_t();
            assert!((lhs - cmi).abs() < 1e-9, "residual {lhs} vs cmi {cmi}");
            let ekl = expected_kl(&chain);
            assert!((ekl - cmi).abs() < 1e-9, "ekl {ekl} vs cmi {cmi}");
        }
    }

    #[test]
    fn bound_index_arithmetic() {
        assert!((theorem1_bound_index(8, 2, 1024).unwrap().value - 0.5).abs() < 1e-15);
        assert!((theorem1_bound_index(1, 1, 1).unwrap().value - 1.0).abs() < 1e-15);
        let v = theorem1_bound_index(12, 10, 50_000).unwrap().value;
        assert!((v - 120.0 / (50_000f64).sqrt()).abs() < 1e-15);
        assert!((v - 0.5367).abs() < 1e-4);
        assert!(theorem1_bound_index(0, 1, 1).is_err());
    }

    #[test]
    fn ib_objective_arithmetic() {
        assert_eq!(ib_objective(2.0, 1.0, 1.0).unwrap(), 1.0);
        assert_eq!(ib_objective(1.7, 0.9, 0.0).unwrap(), 1.7);
        assert!(ib_objective(1.5, 0.5, 3.0).unwrap().abs() < 1e-15);
        assert!(ib_objective(-0.1, 0.5, 1.0).is_err());
    }

    #[test]
    fn symmetric_noise_kernel_properties() {
        let fam = SymmetricNoise;
        let k0 = fam.kernel(KernelTarget::Input, 4, 0.0).unwrap();
        for i in 0..4 {
            assert!((k0.transition[[i, i]] - 1.0).abs() < 1e-15);
        }
        let k1 = fam.kernel(KernelTarget::Latent, 4, 1.0).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert!((k1.transition[[i, j]] - 0.25).abs() < 1e-15);
            }
        }
        assert!(fam.kernel(KernelTarget::Input, 4, 1.5).is_err());
    }
}
