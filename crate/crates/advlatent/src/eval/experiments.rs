//! Experiment templates. Each run loads a trained model package, selects a
//! correctly-classified eval panel, dispatches its cells to a bounded
//! worker pool, and assembles a [`ReportBundle`]. Cells that fail are
//! quarantined as `status=failed` rows with the diagnostic in the note
//! column; everything else proceeds.

use std::collections::VecDeque;
use std::panic::AssertUnwindSafe;
use std::path::PathBuf;
use std::sync::Mutex;

use ndarray::Array4;
use serde::{Deserialize, Serialize};

use super::plot::Series;
use super::report::ReportBundle;
use super::{compute_asr, select_eval_set, EvalSet};
use crate::attacks::{attack_split_model, AccessLevel, Algorithm, AttackConfig, Budget, Norm, Space};
use crate::data::{load_named, Dataset, NamedData};
use crate::error::{Error, Result};
use crate::mi::{mi_under_attack, EstimatorKind, MiSweepConfig, TrainSchedule};
use crate::rng::mix_seed;
use crate::splitnet::{
    attach_bottleneck, load_package, split_model, train_bottleneck, CompressionCodec, SplitModel,
    StrategyKind, TrainConfig,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Template {
    Table1,
    Depth,
    Dimension,
    Compression,
    AttackRoster,
}

impl std::str::FromStr for Template {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "table1" => Ok(Template::Table1),
            "depth" => Ok(Template::Depth),
            "dimension" => Ok(Template::Dimension),
            "compression" => Ok(Template::Compression),
            "attack-roster" => Ok(Template::AttackRoster),
            other => Err(Error::validation(format!(
                "unknown template {other:?}, expected table1|depth|dimension|compression|attack-roster"
            ))),
        }
    }
}

impl std::fmt::Display for Template {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Template::Table1 => "table1",
            Template::Depth => "depth",
            Template::Dimension => "dimension",
            Template::Compression => "compression",
            Template::AttackRoster => "attack-roster",
        })
    }
}

/// Full experiment configuration. Every field has a default, so a config
/// file only needs `package`; the manifest records the resolved values.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Trained full-model package the experiment starts from.
    pub package: PathBuf,
    /// Eval split; empty picks the template's default.
    pub dataset: String,
    pub data_seed: u64,
    /// Eval panel size.
    pub eval_n: usize,
    pub select_seed: u64,
    pub attack_seed: u64,
    /// Budget grid; empty picks the template's default.
    pub eps: Vec<f64>,
    /// Attacks to run; empty picks the template's default.
    pub algorithms: Vec<String>,
    pub steps: usize,
    pub query_budget: u64,
    /// Worker threads; 0 uses the machine's parallelism.
    pub workers: usize,
    /// Dimension template: where to cut; 0 keeps the package's split.
    pub split_index: usize,
    /// Depth template: splits to compare; empty picks per-arch defaults.
    pub split_indices: Vec<usize>,
    pub bottleneck_channels: Vec<usize>,
    pub bottleneck_strategy: String,
    pub bottleneck_epochs: usize,
    pub bottleneck_train_n: usize,
    /// Compression template: codec specs like "none", "qt:8", "jc:70".
    pub codecs: Vec<String>,
    pub roster_eps_linf: f64,
    pub roster_eps_l2: f64,
    pub mi_seeds: Vec<u64>,
    pub mi_steps: usize,
    pub mi_batch: usize,
    pub mi_lr: f32,
    pub mi_hidden: usize,
    pub mi_eval_samples: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            package: PathBuf::new(),
            dataset: String::new(),
            data_seed: 0,
            eval_n: 64,
            select_seed: 0,
            attack_seed: 0,
            eps: Vec::new(),
            algorithms: Vec::new(),
            steps: 10,
            query_budget: 400,
            workers: 0,
            split_index: 0,
            split_indices: Vec::new(),
            bottleneck_channels: vec![12, 3],
            bottleneck_strategy: "db".to_string(),
            bottleneck_epochs: 2,
            bottleneck_train_n: 1024,
            codecs: Vec::new(),
            roster_eps_linf: 0.05,
            roster_eps_l2: 1.0,
            mi_seeds: vec![0, 1, 2],
            mi_steps: 800,
            mi_batch: 256,
            mi_lr: 1e-3,
            mi_hidden: 64,
            mi_eval_samples: 1024,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<ExperimentConfig> {
        toml::from_str(text).map_err(|e| Error::validation(format!("bad experiment config: {e}")))
    }

    pub fn from_path(path: &std::path::Path) -> Result<ExperimentConfig> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }
}

const CIFAR_GRID: [f64; 5] = [0.003, 0.006, 0.009, 0.012, 0.015];

fn table1_grid() -> Vec<f64> {
    (1..=10).map(|i| i as f64 / 100.0).collect()
}

fn default_dataset(template: Template) -> &'static str {
    match template {
        Template::Table1 | Template::AttackRoster => "mnist-test",
        Template::Depth | Template::Dimension | Template::Compression => "cifar-test",
    }
}

fn default_algorithms(template: Template) -> Vec<String> {
    match template {
        Template::Table1 => vec!["pgd".to_string()],
        Template::Depth => vec!["pgd".to_string(), "square".to_string()],
        Template::Dimension | Template::Compression => vec!["pgd".to_string()],
        Template::AttackRoster => Algorithm::ALL.iter().map(|a| a.to_string()).collect(),
    }
}

fn resolve(template: Template, config: &ExperimentConfig, model: &SplitModel) -> Result<ExperimentConfig> {
    let mut resolved = config.clone();
    if resolved.dataset.is_empty() {
        resolved.dataset = default_dataset(template).to_string();
    }
    if resolved.eps.is_empty() {
        resolved.eps = match template {
            Template::Table1 => table1_grid(),
            _ => CIFAR_GRID.to_vec(),
        };
    }
    if resolved.algorithms.is_empty() {
        resolved.algorithms = default_algorithms(template);
    }
    if resolved.workers == 0 {
        resolved.workers = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    }
    if resolved.split_index == 0 {
        resolved.split_index = model.split_index;
    }
    if resolved.split_indices.is_empty() {
        let blocks = model.graph.blocks.len();
        resolved.split_indices = [1usize, 3, 5].iter().copied().filter(|i| *i < blocks).collect();
    }
    if resolved.codecs.is_empty() {
        resolved.codecs = ["none", "qt:8", "qt:6", "qt:4", "jc:70", "jc:40", "entropy:8"]
            .iter()
            .map(|s| s.to_string())
            .collect();
    }
    if resolved.eval_n == 0 {
        return Err(Error::validation("eval_n must be positive".to_string()));
    }
    if resolved.eps.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::validation("budget grid must be strictly increasing".to_string()));
    }
    if resolved.steps == 0 {
        return Err(Error::validation("attacks need at least one step".to_string()));
    }
    for name in &resolved.algorithms {
        name.parse::<Algorithm>()?;
    }
    for spec in &resolved.codecs {
        parse_codec(spec)?;
    }
    resolved.bottleneck_strategy.parse::<StrategyKind>()?;
    Ok(resolved)
}

/// "none" or a codec spec like "qt:8", "jc:70", "entropy:8".
fn parse_codec(spec: &str) -> Result<Option<CompressionCodec>> {
    if spec == "none" {
        return Ok(None);
    }
    CompressionCodec::from_cli_spec(spec).map(Some)
}

/// Run `jobs` on at most `workers` threads, returning results in job
/// order. Panicking jobs are converted to errors instead of taking the
/// whole run down.
fn run_pool<T: Send>(
    workers: usize,
    jobs: Vec<Box<dyn FnOnce() -> Result<T> + Send>>,
) -> Vec<Result<T>> {
    let n = jobs.len();
    let queue: Mutex<VecDeque<(usize, Box<dyn FnOnce() -> Result<T> + Send>)>> =
        Mutex::new(jobs.into_iter().enumerate().collect());
    let slots: Vec<Mutex<Option<Result<T>>>> = (0..n).map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..workers.max(1).min(n.max(1)) {
            scope.spawn(|| loop {
                let job = queue.lock().unwrap().pop_front();
                let (index, job) = match job {
                    Some(j) => j,
                    None => break,
                };
                let outcome = std::panic::catch_unwind(AssertUnwindSafe(job)).unwrap_or_else(|p| {
                    let what = p
                        .downcast_ref::<&str>()
                        .map(|s| s.to_string())
                        .or_else(|| p.downcast_ref::<String>().cloned())
                        .unwrap_or_else(|| "opaque panic".to_string());
                    Err(Error::Other(format!("cell panicked: {what}")))
                });
                *slots[index].lock().unwrap() = Some(outcome);
            });
        }
    });
    slots
        .into_iter()
        .map(|slot| slot.into_inner().unwrap().expect("every job ran"))
        .collect()
}

#[derive(Debug, Clone)]
struct CellSpec {
    algorithm: Algorithm,
    norm: Norm,
    space: Space,
    epsilon: f64,
    seed: u64,
}

#[derive(Debug, Clone)]
struct CellOut {
    asr: f64,
    mean_queries: f64,
    n: usize,
}

fn attack_cell(
    model: &SplitModel,
    images: &Array4<f32>,
    labels: &[usize],
    ids: &[u64],
    spec: &CellSpec,
    steps: usize,
    query_budget: u64,
) -> Result<CellOut> {
    let mut model = model.clone();
    let x = match spec.space {
        Space::Input => images.clone(),
        Space::Latent => model.forward_mobile(images)?,
    };
    let n = x.dim().0;
    let budget = Budget::new(spec.norm, spec.epsilon, spec.space, x.len() / n)?;
    let mut config = AttackConfig::new(spec.algorithm, budget)?;
    config.steps = steps;
    config.query_budget = query_budget;
    config.seed = spec.seed;
    let outcome = attack_split_model(&mut model, &config, &x, labels, ids)?;
    Ok(CellOut {
        asr: compute_asr(&outcome.success)?,
        mean_queries: outcome.queries.iter().sum::<u64>() as f64 / n as f64,
        n,
    })
}

fn fmt6(v: f64) -> String {
    format!("{v:.6}")
}

fn clean_accuracy(model: &mut SplitModel, data: &Dataset) -> Result<f64> {
    let mut correct = 0usize;
    let mut index = 0;
    while index < data.len() {
        let (images, labels) = data.batch(index, 256);
        let preds = model.predict(&images)?;
        correct += preds.iter().zip(&labels).filter(|(p, l)| p == l).count();
        index += labels.len();
    }
    Ok(correct as f64 / data.len() as f64)
}

fn train_family(eval_name: &str) -> Result<NamedData> {
    match eval_name {
        "mnist-test" | "mnist-train" => Ok(NamedData::MnistTrain),
        "cifar-test" | "cifar-train" => Ok(NamedData::CifarTrain),
        other => Err(Error::validation(format!("unknown dataset {other:?}"))),
    }
}

fn slice_dataset(data: &Dataset, n: usize) -> Dataset {
    let (images, labels) = data.batch(0, n.min(data.len()));
    Dataset {
        images,
        labels,
        num_classes: data.num_classes,
    }
}

struct Prep {
    resolved: ExperimentConfig,
    model: SplitModel,
    data: Dataset,
}

fn prepare(template: Template, config: &ExperimentConfig) -> Result<Prep> {
    if config.package.as_os_str().is_empty() {
        return Err(Error::validation("config needs a model package path".to_string()));
    }
    let model = load_package(&config.package)?;
    let resolved = resolve(template, config, &model)?;
    let which: NamedData = resolved.dataset.parse()?;
    let data = load_named(which, resolved.data_seed);
    Ok(Prep {
        resolved,
        model,
        data,
    })
}

fn manifest_for(template: Template, prep: &Prep, incomplete: usize) -> serde_json::Value {
    serde_json::json!({
        "template": template.to_string(),
        "config": prep.resolved,
        "model": {
            "package": prep.resolved.package,
            "arch": prep.model.arch,
            "split_index": prep.model.split_index,
            "weights_hash": prep.model.weights_hash(),
        },
        "incomplete_cells": incomplete,
        "version": env!("CARGO_PKG_VERSION"),
    })
}

/// Run one experiment template end to end and assemble its report.
pub fn run_experiment(template: Template, config: &ExperimentConfig) -> Result<ReportBundle> {
    let prep = prepare(template, config)?;
    match template {
        Template::Table1 => run_table1(prep),
        Template::Depth => run_depth(prep),
        Template::Dimension => run_dimension(prep),
        Template::Compression => run_compression(prep),
        Template::AttackRoster => run_roster(prep),
    }
}

/// Variants (model flavors) attacked over a shared grid; the backbone of
/// the depth, dimension and compression templates.
struct Variant {
    name: String,
    model: SplitModel,
    eval: EvalSet,
    clean_acc: f64,
    /// Extra leading columns (channels, codec, ...) for this variant.
    extra: Vec<String>,
}

fn grid_bundle(
    template: Template,
    prep: &Prep,
    variants: Vec<Variant>,
    spaces: &[Space],
    extra_columns: &[&str],
) -> Result<ReportBundle> {
    let cfg = &prep.resolved;
    let algorithms: Vec<Algorithm> = cfg
        .algorithms
        .iter()
        .map(|s| s.parse())
        .collect::<Result<_>>()?;

    struct Job {
        variant: usize,
        spec: CellSpec,
    }
    let mut specs = Vec::new();
    for (vi, _) in variants.iter().enumerate() {
        for &space in spaces {
            for &algorithm in &algorithms {
                let norm = if algorithm.supports_norm(Norm::Linf) {
                    Norm::Linf
                } else {
                    Norm::L2
                };
                for &epsilon in &cfg.eps {
                    specs.push(Job {
                        variant: vi,
                        spec: CellSpec {
                            algorithm,
                            norm,
                            space,
                            epsilon,
                            seed: mix_seed(cfg.attack_seed, specs.len() as u64),
                        },
                    });
                }
            }
        }
    }

    let mut jobs: Vec<Box<dyn FnOnce() -> Result<CellOut> + Send>> = Vec::new();
    for job in &specs {
        let variant = &variants[job.variant];
        let model = variant.model.clone();
        let (images, labels) = variant.eval.gather(&prep.data)?;
        let ids: Vec<u64> = variant.eval.sample_ids.iter().map(|i| *i as u64).collect();
        let spec = job.spec.clone();
        let steps = cfg.steps;
        let query_budget = cfg.query_budget;
        jobs.push(Box::new(move || {
            attack_cell(&model, &images, &labels, &ids, &spec, steps, query_budget)
        }));
    }
    let outcomes = run_pool(cfg.workers, jobs);

    let mut columns: Vec<String> = vec!["variant".to_string()];
    columns.extend(extra_columns.iter().map(|c| c.to_string()));
    columns.extend(
        ["clean_acc", "space", "algorithm", "norm", "epsilon", "asr", "n", "mean_queries", "status", "note"]
            .iter()
            .map(|c| c.to_string()),
    );

    let mut rows = Vec::new();
    let mut lines: Vec<Series> = Vec::new();
    let mut incomplete = 0usize;
    for (job, outcome) in specs.iter().zip(&outcomes) {
        let variant = &variants[job.variant];
        let spec = &job.spec;
        let mut row = vec![variant.name.clone()];
        row.extend(variant.extra.iter().cloned());
        row.push(fmt6(variant.clean_acc));
        row.push(format!("{:?}", spec.space).to_lowercase());
        row.push(spec.algorithm.to_string());
        row.push(spec.norm.to_string());
        row.push(fmt6(spec.epsilon));
        match outcome {
            Ok(cell) => {
                row.extend([fmt6(cell.asr), cell.n.to_string(), fmt6(cell.mean_queries)]);
                row.extend(["ok".to_string(), String::new()]);
                let series_name = format!("{}/{}", variant.name, spec.algorithm);
                match lines.iter_mut().find(|s| s.name == series_name) {
                    Some(series) => series.points.push((spec.epsilon, cell.asr)),
                    None => lines.push(Series {
                        name: series_name,
                        points: vec![(spec.epsilon, cell.asr)],
                    }),
                }
            }
            Err(e) => {
                incomplete += 1;
                row.extend([String::new(), String::new(), String::new()]);
                row.extend(["failed".to_string(), e.to_string()]);
            }
        }
        rows.push(row);
    }

    let bars = variants
        .iter()
        .map(|v| {
            (
                v.name.clone(),
                vec![("clean_acc".to_string(), v.clean_acc)],
            )
        })
        .collect();
    Ok(ReportBundle {
        template,
        columns,
        rows,
        incomplete,
        lines,
        lines_y_label: "asr".to_string(),
        bars,
        bars_y_label: "clean accuracy".to_string(),
        manifest: manifest_for(template, prep, incomplete),
    })
}

fn run_depth(prep: Prep) -> Result<ReportBundle> {
    let cfg = prep.resolved.clone();
    let mut variants = Vec::new();

    let mut base = prep.model.clone();
    let clean = clean_accuracy(&mut base, &prep.data)?;
    let eval = select_eval_set(&mut base, &prep.data, &cfg.dataset, cfg.eval_n, cfg.select_seed)?;
    variants.push(Variant {
        name: "input".to_string(),
        model: base,
        eval: eval.clone(),
        clean_acc: clean,
        extra: Vec::new(),
    });
    for &index in &cfg.split_indices {
        let mut model = split_model(prep.model.arch, prep.model.graph.clone(), index, prep.model.seed)?;
        let clean = clean_accuracy(&mut model, &prep.data)?;
        variants.push(Variant {
            name: format!("feature{}", index - 1),
            model,
            eval: eval.clone(),
            clean_acc: clean,
            extra: Vec::new(),
        });
    }

    let mut spaces_by_variant = Vec::new();
    for (vi, variant) in variants.iter().enumerate() {
        let space = if vi == 0 { Space::Input } else { Space::Latent };
        spaces_by_variant.push((variant.name.clone(), space));
    }

    // The input variant attacks pixels; every feature variant attacks its
    // own latent. Run them as separate one-space groups to keep the cell
    // grid rectangular.
    let mut rows = Vec::new();
    let mut lines = Vec::new();
    let mut incomplete = 0;
    let mut columns = Vec::new();
    for (variant, (_, space)) in variants.into_iter().zip(spaces_by_variant) {
        let sub = grid_bundle(Template::Depth, &prep, vec![variant], &[space], &[])?;
        columns = sub.columns;
        rows.extend(sub.rows);
        lines.extend(sub.lines);
        incomplete += sub.incomplete;
    }
    Ok(ReportBundle {
        template: Template::Depth,
        columns,
        rows,
        incomplete,
        lines,
        lines_y_label: "asr".to_string(),
        bars: Vec::new(),
        bars_y_label: String::new(),
        manifest: manifest_for(Template::Depth, &prep, incomplete),
    })
}

fn run_dimension(prep: Prep) -> Result<ReportBundle> {
    let cfg = prep.resolved.clone();
    let base = split_model(
        prep.model.arch,
        prep.model.graph.clone(),
        cfg.split_index,
        prep.model.seed,
    )?;

    let train_full = load_named(train_family(&cfg.dataset)?, cfg.data_seed);
    let train = slice_dataset(&train_full, cfg.bottleneck_train_n);
    let val = slice_dataset(&prep.data, 256.min(prep.data.len()));
    let strategy: StrategyKind = cfg.bottleneck_strategy.parse()?;

    let mut variants = Vec::new();
    {
        let mut model = base.clone();
        let clean = clean_accuracy(&mut model, &prep.data)?;
        let eval = select_eval_set(&mut model, &prep.data, &cfg.dataset, cfg.eval_n, cfg.select_seed)?;
        variants.push(Variant {
            name: "none".to_string(),
            model,
            eval,
            clean_acc: clean,
            extra: vec!["0".to_string()],
        });
    }
    for &channels in &cfg.bottleneck_channels {
        let mut model = attach_bottleneck(base.clone(), channels)?;
        let train_config = TrainConfig {
            strategy,
            epochs: cfg.bottleneck_epochs,
            seed: mix_seed(cfg.attack_seed, channels as u64),
            ..TrainConfig::default()
        };
        train_bottleneck(&mut model, &train_config, &train, &val)?;
        let clean = clean_accuracy(&mut model, &prep.data)?;
        let eval = select_eval_set(&mut model, &prep.data, &cfg.dataset, cfg.eval_n, cfg.select_seed)?;
        variants.push(Variant {
            name: format!("bottleneck{channels}"),
            model,
            eval,
            clean_acc: clean,
            extra: vec![channels.to_string()],
        });
    }

    grid_bundle(
        Template::Dimension,
        &prep,
        variants,
        &[Space::Latent],
        &["channels"],
    )
}

fn run_compression(prep: Prep) -> Result<ReportBundle> {
    let cfg = prep.resolved.clone();
    let mut variants = Vec::new();
    for spec in &cfg.codecs {
        let mut model = prep.model.clone();
        if let Some(codec) = parse_codec(spec)? {
            model.codec = Some(codec);
            model.calibrate_codec(&prep.data, 256)?;
        }
        let clean = clean_accuracy(&mut model, &prep.data)?;
        let eval = select_eval_set(&mut model, &prep.data, &cfg.dataset, cfg.eval_n, cfg.select_seed)?;
        variants.push(Variant {
            name: spec.clone(),
            model,
            eval,
            clean_acc: clean,
            extra: vec![spec.clone()],
        });
    }
    grid_bundle(
        Template::Compression,
        &prep,
        variants,
        &[Space::Latent],
        &["codec"],
    )
}

fn access_name(level: AccessLevel) -> &'static str {
    match level {
        AccessLevel::Gradient => "gradient",
        AccessLevel::Score => "score",
        AccessLevel::Decision => "decision",
    }
}

fn run_roster(prep: Prep) -> Result<ReportBundle> {
    let cfg = prep.resolved.clone();
    let mut base = prep.model.clone();
    let eval = select_eval_set(&mut base, &prep.data, &cfg.dataset, cfg.eval_n, cfg.select_seed)?;
    let (images, labels) = eval.gather(&prep.data)?;
    let ids: Vec<u64> = eval.sample_ids.iter().map(|i| *i as u64).collect();

    let algorithms: Vec<Algorithm> = cfg
        .algorithms
        .iter()
        .map(|s| s.parse())
        .collect::<Result<_>>()?;

    let mut specs = Vec::new();
    for &algorithm in &algorithms {
        let (norm, epsilon) = if algorithm.supports_norm(Norm::Linf) {
            (Norm::Linf, cfg.roster_eps_linf)
        } else {
            (Norm::L2, cfg.roster_eps_l2)
        };
        for space in [Space::Input, Space::Latent] {
            specs.push(CellSpec {
                algorithm,
                norm,
                space,
                epsilon,
                seed: mix_seed(cfg.attack_seed, specs.len() as u64),
            });
        }
    }

    let mut jobs: Vec<Box<dyn FnOnce() -> Result<CellOut> + Send>> = Vec::new();
    for spec in &specs {
        let model = base.clone();
        let images = images.clone();
        let labels = labels.clone();
        let ids = ids.clone();
        let spec = spec.clone();
        let steps = cfg.steps;
        let query_budget = cfg.query_budget;
        jobs.push(Box::new(move || {
            attack_cell(&model, &images, &labels, &ids, &spec, steps, query_budget)
        }));
    }
    let outcomes = run_pool(cfg.workers, jobs);

    let columns: Vec<String> = [
        "algorithm", "access", "norm", "epsilon", "input_asr", "latent_asr", "delta", "n",
        "status", "note",
    ]
    .iter()
    .map(|c| c.to_string())
    .collect();

    let mut rows = Vec::new();
    let mut bars = Vec::new();
    let mut incomplete = 0usize;
    let mut deltas = Vec::new();
    for (pair, algorithm) in outcomes.chunks(2).zip(&algorithms) {
        let spec = specs
            .iter()
            .find(|s| s.algorithm == *algorithm)
            .expect("spec exists");
        let mut row = vec![
            algorithm.to_string(),
            access_name(algorithm.access_level()).to_string(),
            spec.norm.to_string(),
            fmt6(spec.epsilon),
        ];
        match (&pair[0], &pair[1]) {
            (Ok(input), Ok(latent)) => {
                let delta = input.asr - latent.asr;
                deltas.push(delta);
                row.extend([
                    fmt6(input.asr),
                    fmt6(latent.asr),
                    fmt6(delta),
                    input.n.to_string(),
                    "ok".to_string(),
                    String::new(),
                ]);
                bars.push((
                    algorithm.to_string(),
                    vec![
                        ("input".to_string(), input.asr),
                        ("latent".to_string(), latent.asr),
                    ],
                ));
            }
            (a, b) => {
                incomplete += 1;
                let note = [a, b]
                    .iter()
                    .filter_map(|r| r.as_ref().err().map(|e| e.to_string()))
                    .collect::<Vec<_>>()
                    .join("; ");
                row.extend([
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    "failed".to_string(),
                    note,
                ]);
            }
        }
        rows.push(row);
    }
    if !deltas.is_empty() {
        let mean = deltas.iter().sum::<f64>() / deltas.len() as f64;
        rows.push(vec![
            "mean".to_string(),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
            fmt6(mean),
            String::new(),
            "ok".to_string(),
            "unweighted mean of per-attack deltas; reporting convention".to_string(),
        ]);
    }

    Ok(ReportBundle {
        template: Template::AttackRoster,
        columns,
        rows,
        incomplete,
        lines: Vec::new(),
        lines_y_label: String::new(),
        bars,
        bars_y_label: "asr".to_string(),
        manifest: manifest_for(Template::AttackRoster, &prep, incomplete),
    })
}

fn run_table1(prep: Prep) -> Result<ReportBundle> {
    let cfg = prep.resolved.clone();
    let algorithm: Algorithm = cfg.algorithms[0].parse()?;
    let mut sweep = MiSweepConfig::new(algorithm, Norm::Linf, cfg.eps.clone());
    sweep.schedule = TrainSchedule {
        steps: cfg.mi_steps,
        batch: cfg.mi_batch,
        lr: cfg.mi_lr,
        hidden: cfg.mi_hidden,
    };
    sweep.eval_samples = cfg.mi_eval_samples;
    sweep.seeds = cfg.mi_seeds.clone();
    sweep.attack_seed = cfg.attack_seed;
    sweep.query_budget = cfg.query_budget;

    let mut model = prep.model.clone();
    let table = mi_under_attack(&mut model, &sweep, &prep.data)?;

    let columns: Vec<String> = [
        "epsilon", "estimator", "input_mi", "latent_mi", "input_acc", "latent_acc", "status",
        "note",
    ]
    .iter()
    .map(|c| c.to_string())
    .collect();

    let mut rows = Vec::new();
    let mut incomplete = 0usize;
    for &epsilon in &cfg.eps {
        for kind in EstimatorKind::ALL {
            let input = table.cell(epsilon, Space::Input, kind);
            let latent = table.cell(epsilon, Space::Latent, kind);
            let input_acc = table.accuracy(epsilon, Space::Input);
            let latent_acc = table.accuracy(epsilon, Space::Latent);
            let notes: Vec<String> = [input, latent]
                .iter()
                .flatten()
                .filter_map(|c| c.note.clone())
                .collect();
            let ok = notes.is_empty()
                && input.and_then(|c| c.value).is_some()
                && latent.and_then(|c| c.value).is_some();
            if !ok {
                incomplete += 1;
            }
            rows.push(vec![
                fmt6(epsilon),
                kind.to_string(),
                input.and_then(|c| c.value).map(fmt6).unwrap_or_default(),
                latent.and_then(|c| c.value).map(fmt6).unwrap_or_default(),
                input_acc.map(fmt6).unwrap_or_default(),
                latent_acc.map(fmt6).unwrap_or_default(),
                if ok { "ok" } else { "failed" }.to_string(),
                notes.join("; "),
            ]);
        }
    }

    let mut lines = Vec::new();
    for (name, space) in [("input accuracy", Space::Input), ("latent accuracy", Space::Latent)] {
        let points: Vec<(f64, f64)> = cfg
            .eps
            .iter()
            .filter_map(|&e| table.accuracy(e, space).map(|a| (e, a)))
            .collect();
        if !points.is_empty() {
            lines.push(Series {
                name: name.to_string(),
                points,
            });
        }
    }

    Ok(ReportBundle {
        template: Template::Table1,
        columns,
        rows,
        incomplete,
        lines,
        lines_y_label: "accuracy".to_string(),
        bars: Vec::new(),
        bars_y_label: String::new(),
        manifest: manifest_for(Template::Table1, &prep, incomplete),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::splitnet::model::mnist_cnn;
    use crate::splitnet::{save_package_set, ArchId};

    #[test]
    fn templates_parse_both_ways() {
        for t in [
            Template::Table1,
            Template::Depth,
            Template::Dimension,
            Template::Compression,
            Template::AttackRoster,
        ] {
            assert_eq!(t.to_string().parse::<Template>().unwrap(), t);
        }
        assert!("tableau".parse::<Template>().is_err());
    }

    #[test]
    fn configs_deserialize_with_defaults_and_reject_typos() {
        let cfg = ExperimentConfig::from_toml("package = \"m.pkg\"\neval_n = 8\n").unwrap();
        assert_eq!(cfg.eval_n, 8);
        assert_eq!(cfg.steps, ExperimentConfig::default().steps);
        assert!(ExperimentConfig::from_toml("packge = \"m.pkg\"\n").is_err());
    }

    #[test]
    fn codec_specs_parse() {
        assert!(parse_codec("none").unwrap().is_none());
        assert!(parse_codec("qt:8").unwrap().is_some());
        assert!(parse_codec("jc:70").unwrap().is_some());
        assert!(parse_codec("entropy:6").unwrap().is_some());
        assert!(parse_codec("qt").is_err());
        assert!(parse_codec("zip:9").is_err());
        assert!(parse_codec("qt:99").is_err());
    }

    #[test]
    fn pools_preserve_order_and_quarantine_failures() {
        let jobs: Vec<Box<dyn FnOnce() -> Result<usize> + Send>> = (0..20)
            .map(|i| {
                let job: Box<dyn FnOnce() -> Result<usize> + Send> = Box::new(move || {
                    if i == 7 {
                        Err(Error::validation("boom".to_string()))
                    } else if i == 11 {
                        panic!("kaboom");
                    } else {
                        Ok(i * i)
                    }
                });
                job
            })
            .collect();
        let results = run_pool(3, jobs);
        assert_eq!(results.len(), 20);
        for (i, r) in results.iter().enumerate() {
            match i {
                7 => assert!(r.as_ref().unwrap_err().to_string().contains("boom")),
                11 => assert!(r.as_ref().unwrap_err().to_string().contains("kaboom")),
                _ => assert_eq!(*r.as_ref().unwrap(), i * i),
            }
        }
    }

    fn packaged_model(dir: &std::path::Path, seed: u64) -> std::path::PathBuf {
        let model = split_model(ArchId::MnistCnn, mnist_cnn(seed), 2, seed).unwrap();
        let path = dir.join("model.pkg");
        save_package_set(&model, &path).unwrap();
        path
    }

    #[test]
    fn depth_reports_are_deterministic_and_complete() {
        let dir = tempfile::tempdir().unwrap();
        let package = packaged_model(dir.path(), 31);
        let config = ExperimentConfig {
            package,
            dataset: "mnist-test".to_string(),
            eval_n: 4,
            eps: vec![0.05, 0.1],
            algorithms: vec!["pgd".to_string()],
            steps: 3,
            split_indices: vec![1, 2],
            workers: 2,
            ..ExperimentConfig::default()
        };
        let bundle = run_experiment(Template::Depth, &config).unwrap();
        assert_eq!(bundle.incomplete, 0);
        assert_eq!(bundle.rows.len(), 3 * 2);
        assert_eq!(bundle.lines.len(), 3);
        let variants: Vec<&str> = bundle.rows.iter().map(|r| r[0].as_str()).collect();
        assert!(variants.contains(&"input"));
        assert!(variants.contains(&"feature0"));
        assert!(variants.contains(&"feature1"));
        assert_eq!(bundle.manifest["incomplete_cells"], 0);
        assert_eq!(bundle.manifest["config"]["eval_n"], 4);

        let again = run_experiment(Template::Depth, &config).unwrap();
        assert_eq!(bundle.rows, again.rows);
    }

    #[test]
    fn compression_reports_cover_every_codec() {
        let dir = tempfile::tempdir().unwrap();
        let package = packaged_model(dir.path(), 32);
        let config = ExperimentConfig {
            package,
            dataset: "mnist-test".to_string(),
            eval_n: 3,
            eps: vec![0.1],
            algorithms: vec!["pgd".to_string()],
            steps: 3,
            codecs: vec!["none".to_string(), "qt:8".to_string()],
            workers: 1,
            ..ExperimentConfig::default()
        };
        let bundle = run_experiment(Template::Compression, &config).unwrap();
        assert_eq!(bundle.rows.len(), 2);
        assert_eq!(bundle.incomplete, 0);
        let codecs: Vec<&str> = bundle.rows.iter().map(|r| r[1].as_str()).collect();
        assert_eq!(codecs, vec!["none", "qt:8"]);
    }

    #[test]
    fn dimension_reports_train_their_bottlenecks() {
        let dir = tempfile::tempdir().unwrap();
        let package = packaged_model(dir.path(), 33);
        let config = ExperimentConfig {
            package,
            dataset: "mnist-test".to_string(),
            eval_n: 3,
            eps: vec![0.1],
            algorithms: vec!["pgd".to_string()],
            steps: 3,
            bottleneck_channels: vec![4],
            bottleneck_epochs: 1,
            bottleneck_train_n: 96,
            workers: 1,
            ..ExperimentConfig::default()
        };
        let bundle = run_experiment(Template::Dimension, &config).unwrap();
        assert_eq!(bundle.rows.len(), 2);
        let names: Vec<&str> = bundle.rows.iter().map(|r| r[0].as_str()).collect();
        assert_eq!(names, vec!["none", "bottleneck4"]);
        assert_eq!(bundle.rows[1][1], "4");
    }

    #[test]
    fn roster_reports_pair_spaces_and_average_deltas() {
        let dir = tempfile::tempdir().unwrap();
        let package = packaged_model(dir.path(), 34);
        let config = ExperimentConfig {
            package,
            dataset: "mnist-test".to_string(),
            eval_n: 2,
            algorithms: vec!["fgsm".to_string(), "square".to_string(), "eatk".to_string()],
            steps: 2,
            query_budget: 30,
            roster_eps_linf: 0.1,
            roster_eps_l2: 0.5,
            workers: 2,
            ..ExperimentConfig::default()
        };
        let bundle = run_experiment(Template::AttackRoster, &config).unwrap();
        assert_eq!(bundle.rows.len(), 4, "three attacks plus the mean row");
        assert_eq!(bundle.rows[3][0], "mean");
        assert!(bundle.rows[3][9].contains("convention"));
        assert_eq!(bundle.rows[1][1], "score");
        assert_eq!(bundle.rows[2][3], fmt6(0.5));
        assert_eq!(bundle.bars.len(), 3);
    }

    #[test]
    fn missing_packages_fail_before_any_work() {
        let config = ExperimentConfig {
            package: PathBuf::from("/definitely/not/here.pkg"),
            ..ExperimentConfig::default()
        };
        assert!(run_experiment(Template::Depth, &config).is_err());
        let empty = ExperimentConfig::default();
        let err = run_experiment(Template::Depth, &empty).unwrap_err();
        assert!(err.to_string().contains("package"));
    }
}
