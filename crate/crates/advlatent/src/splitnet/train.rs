//! Bottleneck training. All four strategies optimize the encoder/decoder
//! pair while the backbone stays frozen, which keeps the unsplit teacher
//! intact as the distillation target and makes strategies comparable on
//! the same backbone.

use ndarray::{Array4, Axis};
use serde::{Deserialize, Serialize};

use super::model::evaluate as evaluate_graph;
use super::split::SplitModel;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{Adam, Layer};
use crate::rng::rng_from;

/// Bottleneck training recipes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrategyKind {
    /// Cross-entropy through the frozen local half.
    Sb,
    /// Feature distillation against the split-point activation.
    Db,
    /// Distillation stage, then cross-entropy with the encoder frozen.
    Bf,
    /// Distillation plus a rate penalty on the transmitted latent.
    Es,
}

impl std::str::FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sb" => Ok(StrategyKind::Sb),
            "db" => Ok(StrategyKind::Db),
            "bf" => Ok(StrategyKind::Bf),
            "es" => Ok(StrategyKind::Es),
            other => Err(Error::validation(format!(
                "unknown strategy {other:?}, expected sb|db|bf|es"
            ))),
        }
    }
}

impl std::fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            StrategyKind::Sb => "sb",
            StrategyKind::Db => "db",
            StrategyKind::Bf => "bf",
            StrategyKind::Es => "es",
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub strategy: StrategyKind,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f32,
    pub seed: u64,
    /// Weight of the rate penalty (ES only).
    pub rate_weight: f32,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            strategy: StrategyKind::Db,
            epochs: 2,
            batch_size: 64,
            lr: 1e-2,
            seed: 0,
            rate_weight: 0.05,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BottleneckTrainReport {
    pub strategy: StrategyKind,
    pub epochs_run: usize,
    pub final_loss: f64,
    pub val_accuracy: f64,
    pub baseline_accuracy: f64,
    /// False when validation accuracy ended below twice chance.
    pub converged: bool,
}

const RATE_BINS: usize = 16;
const RATE_RANGE: (f32, f32) = (0.0, 4.0);

/// Differentiable rate proxy: soft-assign each latent element to histogram
/// bins and charge it the code length of its bin under a fixed prior that
/// concentrates mass near zero. Returns mean bits per element and the
/// gradient with respect to the latent.
fn rate_proxy(z: &Array4<f32>) -> (f32, Array4<f32>) {
    let width = (RATE_RANGE.1 - RATE_RANGE.0) / RATE_BINS as f32;
    let centers: Vec<f32> = (0..RATE_BINS)
        .map(|k| RATE_RANGE.0 + (k as f32 + 0.5) * width)
        .collect();
    let cost: Vec<f32> = centers
        .iter()
        .map(|c| {
            let prior = (-(c - RATE_RANGE.0) / 0.5).exp();
            -prior.max(1e-6).log2()
        })
        .collect();
    let tau = width * width;
    let n = z.len() as f32;
    let mut total = 0.0f32;
    let grad = z.mapv(|v| {
        let mut weights = [0.0f32; RATE_BINS];
        let mut denom = 0.0f32;
        for (k, c) in centers.iter().enumerate() {
            let w = (-(v - c) * (v - c) / tau).exp();
            weights[k] = w;
            denom += w;
        }
        let mut rate = 0.0f32;
        let mut dv = 0.0f32;
        for k in 0..RATE_BINS {
            let p = weights[k] / denom;
            rate += p * cost[k];
            dv += cost[k] * p * (-2.0 * (v - centers[k]) / tau);
        }
        let mean_d: f32 = (0..RATE_BINS)
            .map(|k| (weights[k] / denom) * (-2.0 * (v - centers[k]) / tau))
            .sum();
        let mut g = dv;
        g -= rate * mean_d;
        total += rate;
        g / n
    });
    (total / n, grad)
}

fn gather_batch(data: &Dataset, order: &[usize]) -> (Array4<f32>, Vec<usize>) {
    let dims = data.images.dim();
    let mut images = Array4::zeros((order.len(), dims.1, dims.2, dims.3));
    let mut labels = Vec::with_capacity(order.len());
    for (bi, &si) in order.iter().enumerate() {
        images
            .index_axis_mut(Axis(0), bi)
            .assign(&data.images.index_axis(Axis(0), si));
        labels.push(data.labels[si]);
    }
    (images, labels)
}

fn zero_bottleneck_grads(split: &mut SplitModel) {
    if let Some(b) = &mut split.bottleneck {
        for layer in b.encoder.iter_mut().chain(b.decoder.iter_mut()) {
            layer.visit_params(&mut |p| p.zero_grad());
        }
    }
}

fn step_layers(opt: &mut Adam, layers: &mut [Layer]) {
    opt.apply(layers);
}

enum Phase {
    /// Cross-entropy through the frozen local half; both halves update.
    TaskLoss { freeze_encoder: bool },
    /// Feature reconstruction against the teacher latent, optionally with
    /// the rate penalty on the encoder output.
    Distill { rate_weight: f32 },
}

fn run_phase(
    split: &mut SplitModel,
    data: &Dataset,
    config: &TrainConfig,
    phase: &Phase,
    epochs: usize,
    salt: u64,
) -> f64 {
    let mut rng = rng_from(config.seed ^ 0xb07f17 ^ salt);
    let mut opt = Adam::new(config.lr);
    let n = data.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut final_loss = 0.0f64;
    for _ in 0..epochs {
        for i in (1..n).rev() {
            let j = rand::Rng::random_range(&mut rng, 0..=i);
            order.swap(i, j);
        }
        let mut epoch_loss = 0.0f64;
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let (images, labels) = gather_batch(data, chunk);
            zero_bottleneck_grads(split);
            opt.begin_step();
            let feature = split.graph.forward_range(0, split.split_index, &images, false);
            let loss = match phase {
                Phase::TaskLoss { freeze_encoder } => {
                    let b = split.bottleneck.as_mut().expect("bottleneck attached");
                    let z = b.forward_encoder(&feature, true);
                    let recon = b.forward_decoder(&z, true);
                    let logits4 = split.graph.forward_range(
                        split.split_index,
                        split.graph.blocks.len(),
                        &recon,
                        false,
                    );
                    let logits = logits4
                        .to_shape((chunk.len(), split.graph.num_classes))
                        .expect("head shape")
                        .to_owned();
                    let (loss, dlogits) = crate::nn::cross_entropy(&logits, &labels);
                    let grad4 = dlogits
                        .into_shape_with_order((chunk.len(), split.graph.num_classes, 1, 1))
                        .expect("reshape");
                    let grad_recon = split.graph.backward_range(
                        split.split_index,
                        split.graph.blocks.len(),
                        &grad4,
                    );
                    let b = split.bottleneck.as_mut().expect("bottleneck attached");
                    let grad_z = b.backward_decoder(&grad_recon);
                    if !freeze_encoder {
                        b.backward_encoder(&grad_z);
                    }
                    step_layers(&mut opt, &mut b.decoder);
                    if !freeze_encoder {
                        step_layers(&mut opt, &mut b.encoder);
                    }
                    loss
                }
                Phase::Distill { rate_weight } => {
                    let b = split.bottleneck.as_mut().expect("bottleneck attached");
                    let z = b.forward_encoder(&feature, true);
                    let recon = b.forward_decoder(&z, true);
                    let diff = &recon - &feature;
                    let count = diff.len() as f32;
                    let mse = diff.iter().map(|d| d * d).sum::<f32>() / count;
                    let grad_recon = diff.mapv(|d| 2.0 * d / count);
                    let mut grad_z = b.backward_decoder(&grad_recon);
                    let mut loss = mse;
                    if *rate_weight > 0.0 {
                        let (rate, rate_grad) = rate_proxy(&z);
                        loss += rate_weight * rate;
                        grad_z = &grad_z + &rate_grad.mapv(|g| g * rate_weight);
                    }
                    b.backward_encoder(&grad_z);
                    step_layers(&mut opt, &mut b.encoder);
                    step_layers(&mut opt, &mut b.decoder);
                    loss
                }
            };
            epoch_loss += loss as f64;
            batches += 1;
        }
        final_loss = epoch_loss / batches.max(1) as f64;
    }
    final_loss
}

fn split_accuracy(split: &mut SplitModel, data: &Dataset, batch_size: usize) -> f64 {
    let mut correct = 0usize;
    let mut index = 0;
    while index < data.len() {
        let (images, labels) = data.batch(index, batch_size);
        let latent = split.forward_mobile(&images).expect("shapes fixed");
        let logits = split.forward_local(&latent).expect("shapes fixed");
        let preds = crate::nn::argmax_rows(&logits);
        correct += preds.iter().zip(&labels).filter(|(p, l)| p == l).count();
        index += labels.len();
    }
    correct as f64 / data.len().max(1) as f64
}

/// Train the attached bottleneck in place and report validation accuracy
/// against the frozen backbone's own accuracy. Non-convergence is flagged,
/// not raised.
pub fn train_bottleneck(
    split: &mut SplitModel,
    config: &TrainConfig,
    train: &Dataset,
    val: &Dataset,
) -> Result<BottleneckTrainReport> {
    if split.bottleneck.is_none() {
        return Err(Error::validation("no bottleneck attached".to_string()));
    }
    if config.epochs == 0 {
        return Err(Error::validation("schedule must have at least one epoch".to_string()));
    }
    if train.is_empty() || val.is_empty() {
        return Err(Error::validation("train and val partitions must be nonempty".to_string()));
    }
    let baseline_accuracy = evaluate_graph(&mut split.graph, val, config.batch_size.max(1));
    let final_loss = match config.strategy {
        StrategyKind::Sb => run_phase(
            split,
            train,
            config,
            &Phase::TaskLoss { freeze_encoder: false },
            config.epochs,
            1,
        ),
        StrategyKind::Db => run_phase(
            split,
            train,
            config,
            &Phase::Distill { rate_weight: 0.0 },
            config.epochs,
            2,
        ),
        StrategyKind::Bf => {
            let stage1 = config.epochs.div_ceil(2);
            let stage2 = config.epochs - stage1;
            let mut loss = run_phase(
                split,
                train,
                config,
                &Phase::Distill { rate_weight: 0.0 },
                stage1,
                3,
            );
            if stage2 > 0 {
                loss = run_phase(
                    split,
                    train,
                    config,
                    &Phase::TaskLoss { freeze_encoder: true },
                    stage2,
                    4,
                );
            }
            loss
        }
        StrategyKind::Es => run_phase(
            split,
            train,
            config,
            &Phase::Distill { rate_weight: config.rate_weight },
            config.epochs,
            5,
        ),
    };
    let val_accuracy = split_accuracy(split, val, config.batch_size.max(1));
    let chance = 1.0 / split.graph.num_classes as f64;
    Ok(BottleneckTrainReport {
        strategy: config.strategy,
        epochs_run: config.epochs,
        final_loss,
        val_accuracy,
        baseline_accuracy,
        converged: val_accuracy >= 2.0 * chance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::digits;
    use crate::splitnet::model::{mnist_cnn, train_classifier};
    use crate::splitnet::split::{attach_bottleneck, split_model};
    use crate::splitnet::ArchId;

    fn trained_backbone(seed: u64) -> (crate::splitnet::ModelGraph, Dataset, Dataset) {
        let train = digits::generate(seed, 0, 2048);
        let val = digits::generate(seed, 4096, 256);
        let mut graph = mnist_cnn(seed);
        train_classifier(&mut graph, &train, 5, 64, 1e-2, seed);
        (graph, train, val)
    }

    #[test]
    fn distillation_shrinks_reconstruction_error_and_recovers_accuracy() {
        let (graph, train, val) = trained_backbone(101);
        let split = split_model(ArchId::MnistCnn, graph, 2, 101).unwrap();
        let mut split = attach_bottleneck(split, 8).unwrap();

        let probe = train.batch(0, 64).0;
        let feature = split.graph.forward_range(0, split.split_index, &probe, false);
        let mse_before = {
            let b = split.bottleneck.as_mut().unwrap();
            let z = b.forward_encoder(&feature, false);
            let recon = b.forward_decoder(&z, false);
            (&recon - &feature).mapv(|d| d * d).mean().unwrap()
        };

        let config = TrainConfig {
            strategy: StrategyKind::Db,
            epochs: 5,
            seed: 101,
            ..TrainConfig::default()
        };
        let report = train_bottleneck(&mut split, &config, &train, &val).unwrap();

        let mse_after = {
            let b = split.bottleneck.as_mut().unwrap();
            let z = b.forward_encoder(&feature, false);
            let recon = b.forward_decoder(&z, false);
            (&recon - &feature).mapv(|d| d * d).mean().unwrap()
        };
        assert!(
            mse_after < mse_before * 0.5,
            "distillation did not reduce error: {mse_before} -> {mse_after}"
        );
        assert!(report.converged, "val accuracy {}", report.val_accuracy);
        assert!(report.val_accuracy > report.baseline_accuracy - 0.15);
    }

    #[test]
    fn all_strategies_run_and_report() {
        let (graph, train, val) = trained_backbone(102);
        for strategy in [StrategyKind::Sb, StrategyKind::Db, StrategyKind::Bf, StrategyKind::Es] {
            let split = split_model(ArchId::MnistCnn, graph.clone(), 2, 102).unwrap();
            let mut split = attach_bottleneck(split, 8).unwrap();
            let config = TrainConfig {
                strategy,
                epochs: 2,
                seed: 102,
                ..TrainConfig::default()
            };
            let report = train_bottleneck(&mut split, &config, &train, &val).unwrap();
            assert_eq!(report.strategy, strategy);
            assert!(report.final_loss.is_finite());
            assert!(report.val_accuracy >= 0.0 && report.val_accuracy <= 1.0);
        }
    }

    #[test]
    fn rate_penalty_reduces_coded_size() {
        let (graph, train, val) = trained_backbone(103);
        let mut coded_sizes = Vec::new();
        for strategy in [StrategyKind::Db, StrategyKind::Es] {
            let split = split_model(ArchId::MnistCnn, graph.clone(), 2, 103).unwrap();
            let mut split = attach_bottleneck(split, 8).unwrap();
            let config = TrainConfig {
                strategy,
                epochs: 4,
                seed: 103,
                rate_weight: 0.5,
                ..TrainConfig::default()
            };
            train_bottleneck(&mut split, &config, &train, &val).unwrap();
            split.codec = Some(super::super::codec::CompressionCodec::entropy(8));
            split.calibrate_codec(&train, 128).unwrap();
            let latent = split.forward_mobile(&val.batch(0, 64).0).unwrap();
            let bytes = split.codec.unwrap().encode(&latent).unwrap();
            coded_sizes.push(bytes.len());
        }
        assert!(
            coded_sizes[1] < coded_sizes[0],
            "rate penalty did not shrink stream: {coded_sizes:?}"
        );
    }

    #[test]
    fn rate_proxy_gradient_matches_finite_differences() {
        let mut rng = crate::rng::rng_from(7);
        let z = Array4::from_shape_fn((1, 2, 3, 3), |_| rand::Rng::random_range(&mut rng, 0.1f32..3.5));
        let (_, grad) = rate_proxy(&z);
        let h = 1e-3f32;
        for idx in [(0, 0, 0, 0), (0, 1, 2, 2), (0, 0, 1, 2)] {
            let mut plus = z.clone();
            plus[idx] += h;
            let mut minus = z.clone();
            minus[idx] -= h;
            let numeric = (rate_proxy(&plus).0 - rate_proxy(&minus).0) / (2.0 * h);
            let analytic = grad[idx];
            assert!(
                (numeric - analytic).abs() <= 2e-2 * numeric.abs().max(analytic.abs()).max(1e-3),
                "at {idx:?}: numeric {numeric} vs analytic {analytic}"
            );
        }
    }

    #[test]
    fn preconditions_are_enforced() {
        let (graph, train, val) = trained_backbone(104);
        let mut plain = split_model(ArchId::MnistCnn, graph, 2, 104).unwrap();
        let config = TrainConfig::default();
        assert!(train_bottleneck(&mut plain, &config, &train, &val).is_err());
        let mut boxed = attach_bottleneck(plain, 8).unwrap();
        let zero = TrainConfig { epochs: 0, ..TrainConfig::default() };
        assert!(train_bottleneck(&mut boxed, &zero, &train, &val).is_err());
    }
}
