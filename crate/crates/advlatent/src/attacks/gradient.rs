//! White-box attacks: single-step and iterative gradient methods.
//!
//! All four algorithms share one batched loop. Every per-sample quantity
//! (gradient row, momentum row, random start, projection, success test) is
//! computed independently of the other rows, so attacking a batch yields
//! bit-identical perturbations to attacking each sample alone.

use ndarray::{Array4, Axis};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::budget::{apply_delta, project_lp, Norm, Space};
use super::oracle::GradientEvaluator;
use super::{AccessLevel, Algorithm, AttackConfig, BatchAttackOutcome};
use crate::error::{Error, Result};
use crate::rng::rng_for;

struct LoopSpec {
    steps: usize,
    step_size: f32,
    momentum: f32,
    random_start: bool,
}

fn loop_spec(config: &AttackConfig) -> LoopSpec {
    match config.algorithm {
        Algorithm::Fgsm => LoopSpec {
            steps: 1,
            step_size: config.budget.sigma,
            momentum: 0.0,
            random_start: false,
        },
        Algorithm::Bim => LoopSpec {
            steps: config.steps,
            step_size: config.effective_step_size(),
            momentum: 0.0,
            random_start: false,
        },
        Algorithm::Mim => LoopSpec {
            steps: config.steps,
            step_size: config.effective_step_size(),
            momentum: config.momentum,
            random_start: false,
        },
        Algorithm::Pgd => LoopSpec {
            steps: config.steps,
            step_size: config.effective_step_size(),
            momentum: 0.0,
            random_start: true,
        },
        _ => unreachable!("checked by gradient_attack"),
    }
}

fn sample_count_checks(
    x: &Array4<f32>,
    labels: &[usize],
    ids: &[u64],
    config: &AttackConfig,
) -> Result<()> {
    let (n, c, h, w) = x.dim();
    if n == 0 {
        return Err(Error::validation("empty attack batch".to_string()));
    }
    if labels.len() != n || ids.len() != n {
        return Err(Error::validation(format!(
            "batch of {n} samples with {} labels and {} ids",
            labels.len(),
            ids.len()
        )));
    }
    if c * h * w != config.budget.dim {
        return Err(Error::validation(format!(
            "budget sized for {} elements but tensors have {}",
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
    Ok(())
}

fn random_start(shape: (usize, usize, usize), sigma: f32, norm: Norm, seed: u64, id: u64) -> Array4<f32> {
    let (c, h, w) = shape;
    let d = c * h * w;
    let mut rng = rng_for(seed, id);
    let values: Vec<f32> = match norm {
        Norm::Linf => (0..d).map(|_| rng.random_range(-sigma..=sigma)).collect(),
        Norm::L2 => {
            let gauss: Vec<f32> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm2 = gauss.iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt();
            let u: f64 = rng.random();
            let radius = sigma as f64 * u.powf(1.0 / d as f64);
            let scale = if norm2 > 0.0 { (radius / norm2) as f32 } else { 0.0 };
            gauss.iter().map(|v| v * scale).collect()
        }
    };
    Array4::from_shape_vec((1, c, h, w), values).expect("dims agree")
}

fn write_sample(deltas: &mut Array4<f32>, i: usize, value: &Array4<f32>) {
    deltas
        .index_axis_mut(Axis(0), i)
        .assign(&value.index_axis(Axis(0), 0));
}

fn take_sample(t: &Array4<f32>, i: usize) -> Array4<f32> {
    t.index_axis(Axis(0), i).to_owned().insert_axis(Axis(0))
}

/// Shrink sample `i` of `deltas` so the perturbed input stays inside the
/// unit box when required, then project onto the budget ball. Projection
/// runs last so the stored perturbation meets the norm bound exactly.
fn constrain_sample(
    deltas: &mut Array4<f32>,
    x: &Array4<f32>,
    i: usize,
    config: &AttackConfig,
) {
    let mut d = take_sample(deltas, i);
    if config.budget.space == Space::Input {
        let clean = take_sample(x, i);
        d.zip_mut_with(&clean, |dv, xv| {
            *dv = (*xv + *dv).clamp(0.0, 1.0) - *xv;
        });
    }
    let d = project_lp(&d, config.budget.sigma, config.budget.norm);
    write_sample(deltas, i, &d);
}

/// Run a white-box attack on a batch. `ids` seed each sample's private
/// random stream so results do not depend on batch composition.
pub fn gradient_attack(
    oracle: &mut dyn GradientEvaluator,
    config: &AttackConfig,
    x: &Array4<f32>,
    labels: &[usize],
    ids: &[u64],
) -> Result<BatchAttackOutcome> {
    if config.algorithm.access_level() != AccessLevel::Gradient {
        return Err(Error::validation(format!(
            "{} is not a gradient attack",
            config.algorithm
        )));
    }
    sample_count_checks(x, labels, ids, config)?;
    let (n, c, h, w) = x.dim();
    let spec = loop_spec(config);
    let sigma = config.budget.sigma;

    let mut deltas = Array4::<f32>::zeros((n, c, h, w));
    let mut momentum = Array4::<f32>::zeros((n, c, h, w));
    let mut done = vec![false; n];

    let clean_preds = oracle.predict(x)?;
    for i in 0..n {
        if clean_preds[i] != labels[i] {
            done[i] = true;
        }
    }

    if sigma > 0.0 && spec.random_start {
        for i in 0..n {
            if done[i] {
                continue;
            }
            let start = random_start((c, h, w), sigma, config.budget.norm, config.seed, ids[i]);
            write_sample(&mut deltas, i, &start);
            constrain_sample(&mut deltas, x, i, config);
        }
    }

    if sigma > 0.0 {
        for _ in 0..spec.steps {
            if done.iter().all(|d| *d) {
                break;
            }
            let adv = apply_delta(x, &deltas, config.budget.space);
            let (_losses, _logits, grad) = oracle.loss_logits_grad(&adv, labels)?;
            for i in 0..n {
                if done[i] {
                    continue;
                }
                let g = take_sample(&grad, i);
                let direction = match config.budget.norm {
                    Norm::Linf => {
                        if spec.momentum > 0.0 {
                            let l1 = g.iter().map(|v| v.abs() as f64).sum::<f64>() as f32;
                            let normalized = if l1 > 0.0 { &g / l1 } else { g.clone() };
                            let m = take_sample(&momentum, i) * spec.momentum + &normalized;
                            write_sample(&mut momentum, i, &m);
                            m.mapv(|v| v.signum())
                        } else {
                            g.mapv(|v| v.signum())
                        }
                    }
                    Norm::L2 => {
                        let l2 = g.iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt() as f32;
                        if l2 > 0.0 {
                            &g / l2
                        } else {
                            Array4::zeros(g.dim())
                        }
                    }
                };
                let updated = take_sample(&deltas, i) + direction * spec.step_size;
                write_sample(&mut deltas, i, &updated);
                constrain_sample(&mut deltas, x, i, config);
            }
            let preds = oracle.predict(&apply_delta(x, &deltas, config.budget.space))?;
            for i in 0..n {
                if !done[i] && preds[i] != labels[i] {
                    done[i] = true;
                }
            }
        }
    }

    Ok(BatchAttackOutcome {
        deltas,
        success: done,
        queries: vec![0; n],
    })
}
