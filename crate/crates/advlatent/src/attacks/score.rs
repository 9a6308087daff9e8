//! Score-based black-box attacks: the adversary sees logit vectors only.
//!
//! All three algorithms maximize the margin between the best wrong class
//! and the true class, stop the moment the margin goes positive, and stop
//! gracefully with their best effort when the query allowance runs out.

use ndarray::{Array2, Array4, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::budget::{apply_delta, project_lp, Space};
use super::oracle::ScoreEvaluator;
use super::{AccessLevel, Algorithm, AttackConfig, AttackResult};
use crate::error::{Error, Result};
use crate::rng::rng_for;

const NES_PAIRS: usize = 50;
const NES_SMOOTHING_FRAC: f32 = 0.1;
const NATTACK_POPULATION: usize = 100;
const NATTACK_LR: f32 = 0.02;
const NATTACK_SIGMA: f32 = 0.1;
const SQUARE_P_INIT: f64 = 0.1;
const SQUARE_DECAY_ITERS: [u64; 8] = [10, 50, 200, 1000, 2000, 4000, 6000, 8000];

/// Best wrong-class score minus true-class score; positive means the
/// pipeline is fooled.
pub fn margin(scores: &[f32], label: usize) -> f32 {
    let mut best_other = f32::NEG_INFINITY;
    for (j, s) in scores.iter().enumerate() {
        if j != label && *s > best_other {
            best_other = *s;
        }
    }
    best_other - scores[label]
}

fn constrain(delta: &Array4<f32>, x: &Array4<f32>, config: &AttackConfig) -> Array4<f32> {
    let mut d = delta.clone();
    if config.budget.space == Space::Input {
        d.zip_mut_with(x, |dv, xv| {
            *dv = (*xv + *dv).clamp(0.0, 1.0) - *xv;
        });
    }
    project_lp(&d, config.budget.sigma, config.budget.norm)
}

struct Probe<'a, 'o> {
    oracle: &'a mut dyn ScoreEvaluator,
    x: &'a Array4<f32>,
    label: usize,
    space: Space,
    _marker: std::marker::PhantomData<&'o ()>,
}

impl<'a, 'o> Probe<'a, 'o> {
    /// Margin of x + delta. One query.
    fn margin_at(&mut self, delta: &Array4<f32>) -> Result<f32> {
        let adv = apply_delta(self.x, delta, self.space);
        let scores = self.oracle.scores_one(&adv)?;
        Ok(margin(scores.as_slice().unwrap(), self.label))
    }

    /// Margins of x + each delta. One query per row.
    fn margins_batch(&mut self, deltas: &[Array4<f32>]) -> Result<Vec<f32>> {
        let (_, c, h, w) = deltas[0].dim();
        let mut stacked = Array4::<f32>::zeros((deltas.len(), c, h, w));
        for (i, d) in deltas.iter().enumerate() {
            stacked
                .index_axis_mut(Axis(0), i)
                .assign(&apply_delta(self.x, d, self.space).index_axis(Axis(0), 0));
        }
        let scores: Array2<f32> = self.oracle.scores_batch(&stacked)?;
        Ok(scores
            .rows()
            .into_iter()
            .map(|row| margin(row.as_slice().unwrap(), self.label))
            .collect())
    }
}

fn zeros_like(x: &Array4<f32>) -> Array4<f32> {
    Array4::zeros(x.dim())
}

fn finish(delta: Array4<f32>, success: bool, oracle: &dyn ScoreEvaluator) -> AttackResult {
    AttackResult {
        delta,
        success,
        queries: oracle.queries_used(),
    }
}

/// Run a score-based attack on one sample. The oracle's remaining query
/// allowance is the attack's allowance.
pub fn score_attack(
    oracle: &mut dyn ScoreEvaluator,
    config: &AttackConfig,
    x: &Array4<f32>,
    label: usize,
    id: u64,
) -> Result<AttackResult> {
    if config.algorithm.access_level() != AccessLevel::Score {
        return Err(Error::validation(format!(
            "{} is not a score attack",
            config.algorithm
        )));
    }
    let (n, c, h, w) = x.dim();
    if n != 1 {
        return Err(Error::validation(format!(
            "score attacks take one sample at a time, got a batch of {n}"
        )));
    }
    if c * h * w != config.budget.dim {
        return Err(Error::validation(format!(
            "budget sized for {} elements but tensor has {}",
            config.budget.dim,
            c * h * w
        )));
    }
    if config.budget.space == Space::Input {
        if let Some(v) = x.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::validation(format!(
                "input-space attack requires clean values in [0,1], found {v}"
            )));
        }
    }

    let mut probe = Probe {
        oracle,
        x,
        label,
        space: config.budget.space,
        _marker: std::marker::PhantomData,
    };
    if probe.oracle.queries_left() == 0 {
        return Ok(finish(zeros_like(x), false, probe.oracle));
    }
    let clean_margin = probe.margin_at(&zeros_like(x))?;
    if clean_margin > 0.0 {
        return Ok(finish(zeros_like(x), true, probe.oracle));
    }
    if config.budget.sigma == 0.0 {
        return Ok(finish(zeros_like(x), false, probe.oracle));
    }

    let mut rng = rng_for(config.seed, id);
    match config.algorithm {
        Algorithm::Nes => nes(&mut probe, config, &mut rng),
        Algorithm::Nattack => nattack(&mut probe, config, &mut rng),
        Algorithm::Square => square(&mut probe, config, clean_margin, &mut rng),
        _ => unreachable!("checked above"),
    }
}

fn gaussian_like(shape: (usize, usize, usize, usize), rng: &mut ChaCha8Rng) -> Array4<f32> {
    let count = shape.0 * shape.1 * shape.2 * shape.3;
    let values: Vec<f32> = (0..count).map(|_| StandardNormal.sample(rng)).collect();
    Array4::from_shape_vec(shape, values).expect("dims agree")
}

fn nes(
    probe: &mut Probe<'_, '_>,
    config: &AttackConfig,
    rng: &mut ChaCha8Rng,
) -> Result<AttackResult> {
    let pairs = config.samples_per_step.unwrap_or(NES_PAIRS);
    let sigma = config.budget.sigma;
    let smoothing = NES_SMOOTHING_FRAC * sigma;
    let step = config.effective_step_size();
    let mut delta = zeros_like(probe.x);

    for _ in 0..config.steps {
        if probe.oracle.queries_left() < (2 * pairs + 1) as u64 {
            break;
        }
        let noises: Vec<Array4<f32>> = (0..pairs)
            .map(|_| gaussian_like(probe.x.dim(), rng))
            .collect();
        let mut probes = Vec::with_capacity(2 * pairs);
        for u in &noises {
            probes.push(&delta + &(u * smoothing));
            probes.push(&delta - &(u * smoothing));
        }
        let margins = probe.margins_batch(&probes)?;
        let mut grad = zeros_like(probe.x);
        for (j, u) in noises.iter().enumerate() {
            let diff = margins[2 * j] - margins[2 * j + 1];
            grad.zip_mut_with(u, |g, uv| *g += diff * uv);
        }
        delta.zip_mut_with(&grad, |d, g| *d += step * g.signum());
        delta = constrain(&delta, probe.x, config);
        if probe.margin_at(&delta)? > 0.0 {
            return Ok(finish(delta, true, probe.oracle));
        }
    }
    Ok(finish(delta, false, probe.oracle))
}

fn nattack(
    probe: &mut Probe<'_, '_>,
    config: &AttackConfig,
    rng: &mut ChaCha8Rng,
) -> Result<AttackResult> {
    let population = config.samples_per_step.unwrap_or(NATTACK_POPULATION);
    let sigma = config.budget.sigma;
    let mut mean = zeros_like(probe.x);
    let mut best_delta = zeros_like(probe.x);
    let mut best_margin = f32::NEG_INFINITY;

    while probe.oracle.queries_left() >= population as u64 {
        let noises: Vec<Array4<f32>> = (0..population)
            .map(|_| gaussian_like(probe.x.dim(), rng))
            .collect();
        let candidates: Vec<Array4<f32>> = noises
            .iter()
            .map(|eps| {
                let z = &mean + &(eps * NATTACK_SIGMA);
                constrain(&z.mapv(|v| sigma * v.tanh()), probe.x, config)
            })
            .collect();
        let margins = probe.margins_batch(&candidates)?;
        for (i, m) in margins.iter().enumerate() {
            if *m > best_margin {
                best_margin = *m;
                best_delta = candidates[i].clone();
            }
            if *m > 0.0 {
                return Ok(finish(candidates[i].clone(), true, probe.oracle));
            }
        }
        let mean_m = margins.iter().sum::<f32>() / population as f32;
        let var = margins
            .iter()
            .map(|m| (m - mean_m) * (m - mean_m))
            .sum::<f32>()
            / population as f32;
        let std = var.sqrt();
        if std > 1e-12 {
            let scale = NATTACK_LR / (population as f32 * NATTACK_SIGMA);
            for (eps, m) in noises.iter().zip(&margins) {
                let weight = scale * (m - mean_m) / std;
                mean.zip_mut_with(eps, |mu, e| *mu += weight * e);
            }
        }
    }
    Ok(finish(best_delta, false, probe.oracle))
}

fn square_fraction(iter: u64) -> f64 {
    let halvings = SQUARE_DECAY_ITERS.iter().filter(|t| iter >= **t).count();
    SQUARE_P_INIT / f64::powi(2.0, halvings as i32)
}

fn square(
    probe: &mut Probe<'_, '_>,
    config: &AttackConfig,
    clean_margin: f32,
    rng: &mut ChaCha8Rng,
) -> Result<AttackResult> {
    let sigma = config.budget.sigma;
    let (_, c, h, w) = probe.x.dim();
    let mut delta = zeros_like(probe.x);
    for ch in 0..c {
        for col in 0..w {
            let sign = if rng.random::<bool>() { sigma } else { -sigma };
            delta
                .index_axis_mut(Axis(0), 0)
                .index_axis_mut(Axis(0), ch)
                .index_axis_mut(Axis(1), col)
                .fill(sign);
        }
    }
    delta = constrain(&delta, probe.x, config);

    let mut best_margin = clean_margin;
    let mut best_delta = zeros_like(probe.x);
    if probe.oracle.queries_left() == 0 {
        return Ok(finish(best_delta, false, probe.oracle));
    }
    let m = probe.margin_at(&delta)?;
    if m > 0.0 {
        return Ok(finish(delta, true, probe.oracle));
    }
    if m > best_margin {
        best_margin = m;
        best_delta = delta.clone();
    } else {
        delta = best_delta.clone();
    }

    let mut iter = 0u64;
    while probe.oracle.queries_left() > 0 {
        let p = square_fraction(iter);
        let side = (((p * (h * w) as f64).sqrt()).round() as usize).clamp(1, h.min(w));
        let top = rng.random_range(0..=h - side);
        let left = rng.random_range(0..=w - side);
        let mut candidate = delta.clone();
        for ch in 0..c {
            let sign = if rng.random::<bool>() { sigma } else { -sigma };
            candidate
                .slice_mut(ndarray::s![0, ch, top..top + side, left..left + side])
                .fill(sign);
        }
        let candidate = constrain(&candidate, probe.x, config);
        let m = probe.margin_at(&candidate)?;
        if m > 0.0 {
            return Ok(finish(candidate, true, probe.oracle));
        }
        if m > best_margin {
            best_margin = m;
            best_delta = candidate.clone();
            delta = candidate;
        }
        iter += 1;
    }
    Ok(finish(best_delta, false, probe.oracle))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attacks::budget::{lp_norm, Budget, Norm};
    use crate::attacks::oracle::LinearOracle;
    use ndarray::array;

    fn two_class(query_budget: u64) -> LinearOracle {
        LinearOracle::new(
            array![[1.0f32, 0.0], [0.0, 1.0]],
            array![0.0f32, 0.0],
            query_budget,
        )
    }

    fn config(algorithm: Algorithm, epsilon: f64) -> AttackConfig {
        let budget = Budget::new(Norm::Linf, epsilon, Space::Input, 2).unwrap();
        let mut cfg = AttackConfig::new(algorithm, budget).unwrap();
        cfg.samples_per_step = Some(10);
        cfg.steps = 30;
        cfg
    }

    fn sample() -> Array4<f32> {
        Array4::from_shape_vec((1, 1, 1, 2), vec![0.7f32, 0.3]).unwrap()
    }

    #[test]
    fn margin_is_best_wrong_minus_true() {
        assert_eq!(margin(&[2.0, 5.0, 1.0], 0), 3.0);
        assert_eq!(margin(&[2.0, 5.0, 1.0], 1), -3.0);
    }

    #[test]
    fn all_three_succeed_on_a_separable_toy() {
        for algorithm in [Algorithm::Nes, Algorithm::Nattack, Algorithm::Square] {
            let mut oracle = two_class(10_000);
            let cfg = config(algorithm, 0.25);
            let out = score_attack(&mut oracle, &cfg, &sample(), 0, 7).unwrap();
            assert!(out.success, "{algorithm} failed on the toy problem");
            assert!(lp_norm(&out.delta, Norm::Linf) <= 0.25 + 1e-6);
            assert!(out.queries <= 10_000);
            let adv = apply_delta(&sample(), &out.delta, Space::Input);
            assert!(adv[[0, 0, 0, 1]] > adv[[0, 0, 0, 0]]);
        }
    }

    #[test]
    fn misclassified_input_costs_one_query() {
        for algorithm in [Algorithm::Nes, Algorithm::Nattack, Algorithm::Square] {
            let mut oracle = two_class(10_000);
            let cfg = config(algorithm, 0.1);
            let out = score_attack(&mut oracle, &cfg, &sample(), 1, 7).unwrap();
            assert!(out.success);
            assert_eq!(out.queries, 1);
            assert!(out.delta.iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn exhausted_budget_fails_gracefully_within_allowance() {
        for algorithm in [Algorithm::Nes, Algorithm::Nattack, Algorithm::Square] {
            let mut oracle = two_class(5);
            let cfg = config(algorithm, 0.01);
            let out = score_attack(&mut oracle, &cfg, &sample(), 0, 7).unwrap();
            assert!(!out.success, "{algorithm} cannot win with epsilon 0.01");
            assert!(out.queries <= 5);
            assert!(lp_norm(&out.delta, Norm::Linf) <= 0.01 + 1e-6);
        }
    }

    #[test]
    fn same_seed_and_id_reproduce_the_same_perturbation() {
        for algorithm in [Algorithm::Nes, Algorithm::Nattack, Algorithm::Square] {
            let cfg = config(algorithm, 0.18);
            let mut a = two_class(2_000);
            let mut b = two_class(2_000);
            let out_a = score_attack(&mut a, &cfg, &sample(), 0, 3).unwrap();
            let out_b = score_attack(&mut b, &cfg, &sample(), 0, 3).unwrap();
            assert_eq!(out_a.delta, out_b.delta);
            assert_eq!(out_a.queries, out_b.queries);
        }
    }

    #[test]
    fn square_patch_fraction_decays_geometrically() {
        assert_eq!(square_fraction(0), SQUARE_P_INIT);
        assert_eq!(square_fraction(10), SQUARE_P_INIT / 2.0);
        assert_eq!(square_fraction(199), SQUARE_P_INIT / 4.0);
        assert_eq!(square_fraction(8000), SQUARE_P_INIT / 256.0);
        assert!(square_fraction(1_000_000) > 0.0);
    }

    #[test]
    fn batches_are_rejected() {
        let mut oracle = two_class(100);
        let cfg = config(Algorithm::Nes, 0.1);
        let xs = Array4::from_shape_vec((2, 1, 1, 2), vec![0.7f32, 0.3, 0.4, 0.6]).unwrap();
        assert!(score_attack(&mut oracle, &cfg, &xs, 0, 0).is_err());
        let grad_cfg = AttackConfig::new(
            Algorithm::Pgd,
            Budget::new(Norm::Linf, 0.1, Space::Input, 2).unwrap(),
        )
        .unwrap();
        assert!(score_attack(&mut oracle, &grad_cfg, &sample(), 0, 0).is_err());
    }
}
