//! Hard-label black-box attacks: the adversary sees predicted classes only.
//!
//! All three algorithms first hunt for any misclassified point, then shrink
//! its distance to the clean input. The attack counts as a success only if
//! the final distance fits the budget; otherwise the zero perturbation is
//! returned. Every query goes through the real pipeline.

use ndarray::Array4;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::budget::{apply_delta, lp_norm, Norm, Space};
use super::dct::low_frequency_direction;
use super::oracle::LabelEvaluator;
use super::{AccessLevel, Algorithm, AttackConfig, AttackResult};
use crate::error::{Error, Result};
use crate::rng::rng_for;

const INIT_TRIES: usize = 25;
const SIGNOPT_PROBES: usize = 10;
const SIGNOPT_SMOOTHING: f32 = 0.01;
const BISECT_ITERS: usize = 12;
const TRIANGLE_FRAC: f64 = 0.3;

struct HardProbe<'a> {
    oracle: &'a mut dyn LabelEvaluator,
    x: &'a Array4<f32>,
    label: usize,
    space: Space,
}

impl HardProbe<'_> {
    fn can_query(&self) -> bool {
        self.oracle.queries_left() >= 1
    }

    /// Whether x + delta fools the pipeline. One query.
    fn is_adversarial(&mut self, delta: &Array4<f32>) -> Result<bool> {
        let adv = apply_delta(self.x, delta, self.space);
        Ok(self.oracle.label_one(&adv)? != self.label)
    }
}

fn l2(delta: &Array4<f32>) -> f32 {
    lp_norm(delta, Norm::L2)
}

fn normalize(delta: &Array4<f32>) -> Array4<f32> {
    let norm = l2(delta);
    if norm > 0.0 {
        delta / norm
    } else {
        delta.clone()
    }
}

fn gaussian_like(shape: (usize, usize, usize, usize), rng: &mut ChaCha8Rng) -> Array4<f32> {
    let count = shape.0 * shape.1 * shape.2 * shape.3;
    let values: Vec<f32> = (0..count).map(|_| StandardNormal.sample(rng)).collect();
    Array4::from_shape_vec(shape, values).expect("dims agree")
}

fn zeros_like(x: &Array4<f32>) -> Array4<f32> {
    Array4::zeros(x.dim())
}

fn finish(delta: Array4<f32>, success: bool, oracle: &dyn LabelEvaluator) -> AttackResult {
    AttackResult {
        delta,
        success,
        queries: oracle.queries_used(),
    }
}

/// Search for any misclassified starting point, budget permitting. Input
/// space tries uniform random images; latent space tries random directions
/// at growing radii.
fn find_initial_adversary(
    probe: &mut HardProbe<'_>,
    sigma: f32,
    rng: &mut ChaCha8Rng,
) -> Result<Option<Array4<f32>>> {
    for attempt in 0..INIT_TRIES {
        if !probe.can_query() {
            return Ok(None);
        }
        let candidate = match probe.space {
            Space::Input => {
                let mut delta = zeros_like(probe.x);
                delta.zip_mut_with(probe.x, |d, xv| {
                    *d = rng.random_range(0.0..=1.0) - *xv;
                });
                delta
            }
            Space::Latent => {
                let radius = sigma * 4.0 * f32::powi(2.0, (attempt / 5) as i32);
                normalize(&gaussian_like(probe.x.dim(), rng)) * radius
            }
        };
        if probe.is_adversarial(&candidate)? {
            return Ok(Some(candidate));
        }
    }
    Ok(None)
}

/// Certified adversarial scale along `theta` found by bisection; `hi` must
/// already be adversarial.
fn bisect(probe: &mut HardProbe<'_>, theta: &Array4<f32>, hi: f32) -> Result<f32> {
    let mut lo = 0.0f32;
    let mut hi = hi;
    for _ in 0..BISECT_ITERS {
        if !probe.can_query() {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if probe.is_adversarial(&(theta * mid))? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

fn eatk(
    probe: &mut HardProbe<'_>,
    init: Array4<f32>,
    sigma: f32,
    rng: &mut ChaCha8Rng,
) -> Result<Array4<f32>> {
    let dim = init.len() as f32;
    let mut best = init;
    let mut dist = l2(&best);
    let mut scale = 0.1f32;
    while probe.can_query() && dist > sigma * 0.999 {
        let noise = gaussian_like(best.dim(), rng) * (scale * dist / dim.sqrt());
        let pulled = &best * (1.0 - 0.3 * scale);
        let candidate = &pulled + &noise;
        let cand_dist = l2(&candidate);
        if cand_dist < dist && probe.is_adversarial(&candidate)? {
            best = candidate;
            dist = cand_dist;
            scale = (scale * 1.2).min(0.5);
        } else {
            scale = (scale * 0.95).max(1e-3);
        }
    }
    Ok(best)
}

fn signopt(
    probe: &mut HardProbe<'_>,
    init: Array4<f32>,
    sigma: f32,
    samples: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Array4<f32>> {
    let mut theta = normalize(&init);
    let mut g = bisect(probe, &theta, l2(&init))?;
    let mut eta = 0.2f32;
    while probe.can_query() && g > sigma * 0.999 {
        let mut grad = zeros_like(probe.x);
        let mut probes_done = 0usize;
        for _ in 0..samples {
            if !probe.can_query() {
                break;
            }
            let u = gaussian_like(probe.x.dim(), rng);
            let tilted = normalize(&(&theta + &(&u * SIGNOPT_SMOOTHING)));
            let sign = if probe.is_adversarial(&(&tilted * g))? {
                -1.0f32
            } else {
                1.0f32
            };
            grad.zip_mut_with(&u, |gv, uv| *gv += sign * uv);
            probes_done += 1;
        }
        if probes_done == 0 {
            break;
        }
        grad.mapv_inplace(|v| v / probes_done as f32);
        let proposal = normalize(&(&theta - &(&grad * eta)));
        if !probe.can_query() {
            break;
        }
        if probe.is_adversarial(&(&proposal * g))? {
            theta = proposal;
            g = bisect(probe, &theta, g)?;
            eta = (eta * 1.1).min(1.0);
        } else {
            eta = (eta * 0.5).max(1e-3);
        }
    }
    Ok(&theta * g)
}

fn triangle(
    probe: &mut HardProbe<'_>,
    init: Array4<f32>,
    sigma: f32,
    rng: &mut ChaCha8Rng,
) -> Result<Array4<f32>> {
    let mut best = init;
    let mut dist = l2(&best);
    let mut angle = 0.3f32;
    let ratio = 0.95f32;
    while probe.can_query() && dist > sigma * 0.999 {
        let raw = low_frequency_direction(best.dim(), TRIANGLE_FRAC, rng);
        let unit = normalize(&best);
        let dot: f32 = raw.iter().zip(unit.iter()).map(|(a, b)| a * b).sum();
        let mut side = &raw - &(&unit * dot);
        let side_norm = l2(&side);
        if side_norm < 1e-6 {
            continue;
        }
        side.mapv_inplace(|v| v / side_norm);
        let mut accepted = false;
        for gamma in [angle, -angle] {
            if !probe.can_query() {
                break;
            }
            let candidate =
                (&unit * gamma.cos() + &side * gamma.sin()) * (dist * ratio);
            if probe.is_adversarial(&candidate)? {
                best = candidate;
                dist = l2(&best);
                angle = (angle * 1.05).min(1.0);
                accepted = true;
                break;
            }
        }
        if !accepted {
            angle = (angle * 0.9).max(0.05);
        }
    }
    Ok(best)
}

/// Run a hard-label attack on one sample. The oracle's remaining query
/// allowance is the attack's allowance.
pub fn decision_attack(
    oracle: &mut dyn LabelEvaluator,
    config: &AttackConfig,
    x: &Array4<f32>,
    label: usize,
    id: u64,
) -> Result<AttackResult> {
    if config.algorithm.access_level() != AccessLevel::Decision {
        return Err(Error::validation(format!(
            "{} is not a decision attack",
            config.algorithm
        )));
    }
    let (n, c, h, w) = x.dim();
    if n != 1 {
        return Err(Error::validation(format!(
            "decision attacks take one sample at a time, got a batch of {n}"
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

    let mut probe = HardProbe {
        oracle,
        x,
        label,
        space: config.budget.space,
    };
    if !probe.can_query() {
        return Ok(finish(zeros_like(x), false, probe.oracle));
    }
    if probe.is_adversarial(&zeros_like(x))? {
        return Ok(finish(zeros_like(x), true, probe.oracle));
    }
    let sigma = config.budget.sigma;
    if sigma == 0.0 {
        return Ok(finish(zeros_like(x), false, probe.oracle));
    }

    let mut rng = rng_for(config.seed, id);
    let Some(init) = find_initial_adversary(&mut probe, sigma, &mut rng)? else {
        return Ok(finish(zeros_like(x), false, probe.oracle));
    };

    let best = match config.algorithm {
        Algorithm::Eatk => eatk(&mut probe, init, sigma, &mut rng)?,
        Algorithm::Signopt => {
            let samples = config.samples_per_step.unwrap_or(SIGNOPT_PROBES);
            signopt(&mut probe, init, sigma, samples, &mut rng)?
        }
        Algorithm::Triangle => triangle(&mut probe, init, sigma, &mut rng)?,
        _ => unreachable!("checked above"),
    };

    if l2(&best) <= sigma {
        Ok(finish(best, true, probe.oracle))
    } else {
        Ok(finish(zeros_like(x), false, probe.oracle))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attacks::budget::Budget;
    use crate::attacks::oracle::LinearOracle;
    use ndarray::array;

    const DECISION_ALGOS: [Algorithm; 3] =
        [Algorithm::Eatk, Algorithm::Signopt, Algorithm::Triangle];

    fn two_class(query_budget: u64) -> LinearOracle {
        LinearOracle::new(
            array![[1.0f32, 0.0], [0.0, 1.0]],
            array![0.0f32, 0.0],
            query_budget,
        )
    }

    fn config(algorithm: Algorithm, sigma: f32) -> AttackConfig {
        let epsilon = (sigma as f64) * (sigma as f64) / 2.0;
        let budget = Budget::new(Norm::L2, epsilon, Space::Input, 2).unwrap();
        AttackConfig::new(algorithm, budget).unwrap()
    }

    fn sample() -> Array4<f32> {
        Array4::from_shape_vec((1, 1, 1, 2), vec![0.7f32, 0.3]).unwrap()
    }

    const OPTIMAL_DISTANCE: f32 = 0.282_842_7;

    #[test]
    fn signopt_recovers_the_minimal_boundary_distance() {
        let mut oracle = two_class(5_000);
        let mut cfg = config(Algorithm::Signopt, 0.285);
        cfg.samples_per_step = Some(8);
        let out = decision_attack(&mut oracle, &cfg, &sample(), 0, 11).unwrap();
        assert!(out.success);
        let dist = l2(&out.delta);
        assert!(dist >= OPTIMAL_DISTANCE - 1e-4, "below the optimum: {dist}");
        assert!(
            dist <= OPTIMAL_DISTANCE * 1.05,
            "more than 5% above the optimum: {dist}"
        );
    }

    #[test]
    fn all_three_find_compliant_adversaries_on_the_toy() {
        for algorithm in DECISION_ALGOS {
            let mut oracle = two_class(10_000);
            let cfg = config(algorithm, 0.35);
            let out = decision_attack(&mut oracle, &cfg, &sample(), 0, 4).unwrap();
            assert!(out.success, "{algorithm} failed");
            assert!(l2(&out.delta) <= cfg.budget.sigma);
            assert!(out.queries <= 10_000);
            let adv = apply_delta(&sample(), &out.delta, Space::Input);
            assert!(adv[[0, 0, 0, 1]] > adv[[0, 0, 0, 0]]);
        }
    }

    #[test]
    fn unreachable_budgets_fail_with_a_zero_perturbation() {
        for algorithm in DECISION_ALGOS {
            let mut oracle = two_class(2_000);
            let cfg = config(algorithm, 0.2);
            let out = decision_attack(&mut oracle, &cfg, &sample(), 0, 4).unwrap();
            assert!(!out.success, "{algorithm} claims an impossible success");
            assert!(out.delta.iter().all(|v| *v == 0.0));
            assert!(out.queries <= 2_000);
        }
    }

    #[test]
    fn misclassified_input_costs_one_query() {
        for algorithm in DECISION_ALGOS {
            let mut oracle = two_class(100);
            let cfg = config(algorithm, 0.3);
            let out = decision_attack(&mut oracle, &cfg, &sample(), 1, 4).unwrap();
            assert!(out.success);
            assert_eq!(out.queries, 1);
            assert!(out.delta.iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn attacks_are_reproducible_for_a_seed_and_id() {
        for algorithm in DECISION_ALGOS {
            let cfg = config(algorithm, 0.32);
            let mut a = two_class(1_500);
            let mut b = two_class(1_500);
            let out_a = decision_attack(&mut a, &cfg, &sample(), 0, 9).unwrap();
            let out_b = decision_attack(&mut b, &cfg, &sample(), 0, 9).unwrap();
            assert_eq!(out_a.delta, out_b.delta);
            assert_eq!(out_a.queries, out_b.queries);
        }
    }

    #[test]
    fn no_queries_means_no_attack() {
        let mut oracle = two_class(0);
        let cfg = config(Algorithm::Eatk, 0.3);
        let out = decision_attack(&mut oracle, &cfg, &sample(), 0, 0).unwrap();
        assert!(!out.success);
        assert_eq!(out.queries, 0);
        assert!(out.delta.iter().all(|v| *v == 0.0));
    }
}
