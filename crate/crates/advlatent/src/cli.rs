//! Command-line entry points.

use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::attacks::{
    attack_split_model, lp_norm, Algorithm, AttackConfig, Budget, Norm, Space,
};
use crate::data::{load_named, Dataset, NamedData};
use crate::error::{Error, Result};
use crate::eval::{
    emit_plots, export_results, run_experiment, select_eval_set, ExperimentConfig, ExportFormat,
    Template,
};
use crate::harness::{
    run_interceptor_session, run_mobile_session, serve_edge_session, InterceptPlan,
};
use crate::ib::{self, CampaignKind};
use crate::mi::{mi_under_attack, EstimatorKind, MiSweepConfig, TrainSchedule};
use crate::splitnet::{
    attach_bottleneck, build_arch, load_package, save_package_set, split_model, train_bottleneck,
    train_classifier, ArchId, CompressionCodec, SplitModel, StrategyKind, TrainConfig,
};

#[derive(Parser)]
#[command(name = "advlatent", version, about = "adversarial robustness of split inference")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Verify exact information laws on randomized finite chains.
    Theory {
        /// Law to check: dpi|lemma2|thm2|cor1.
        #[arg(long)]
        campaign: CampaignKind,
        #[arg(long, default_value_t = 1000)]
        trials: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Largest alphabet size per chain variable.
        #[arg(long, default_value_t = 8)]
        max_support: usize,
    },
    /// Train a classifier, cut it at a block boundary, and package the
    /// full model plus its mobile and local halves.
    Split {
        #[arg(long)]
        arch: String,
        #[arg(long)]
        split_index: usize,
        /// Insert a bottleneck with this many channels at the split.
        #[arg(long)]
        bottleneck_channels: Option<usize>,
        /// Compress the transmitted latent: qt:B, jc:Q, or entropy:B.
        #[arg(long)]
        codec: Option<String>,
        #[arg(long)]
        out: PathBuf,
        /// Weight initialization and training seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Training settings file (epochs, batch_size, lr, data_seed).
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Fit the bottleneck of a packaged model.
    TrainBottleneck {
        #[arg(long)]
        model: PathBuf,
        /// sb|db|bf|es.
        #[arg(long, default_value = "db")]
        strategy: String,
        #[arg(long, default_value_t = 2)]
        epochs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 64)]
        batch_size: usize,
        #[arg(long, default_value_t = 1e-3)]
        lr: f32,
        /// Rate penalty weight (es strategy).
        #[arg(long, default_value_t = 0.01)]
        rate_weight: f32,
        #[arg(long, default_value_t = 0)]
        data_seed: u64,
        /// Output package; defaults to rewriting the input.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Attack a packaged pipeline over an eval panel and dump per-sample
    /// results.
    Attack {
        #[arg(long)]
        model: PathBuf,
        /// input|latent.
        #[arg(long)]
        space: String,
        #[arg(long)]
        algo: String,
        /// linf|l2.
        #[arg(long, default_value = "linf")]
        norm: String,
        #[arg(long)]
        eps: f64,
        #[arg(long, default_value_t = 40)]
        steps: usize,
        #[arg(long, default_value_t = 10_000)]
        queries: u64,
        /// Eval panel size.
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Dataset split; default is the arch's test split.
        #[arg(long)]
        data: Option<String>,
        #[arg(long, default_value_t = 0)]
        data_seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sweep a budget grid and estimate I(Y;T) on clean and attacked
    /// latents with every requested estimator.
    MiEstimate {
        #[arg(long)]
        model: PathBuf,
        /// Attack spec algo-norm, e.g. pgd-linf.
        #[arg(long, default_value = "pgd-linf")]
        attack: String,
        /// start:end:step, e.g. 0.01:0.10:0.01.
        #[arg(long, default_value = "0.01:0.10:0.01")]
        eps_grid: String,
        /// Comma list of mine,nwj,cpc,club,doe.
        #[arg(long, default_value = "mine,nwj,cpc,club,doe")]
        estimators: String,
        /// Number of estimator seeds; cells report the median.
        #[arg(long, default_value_t = 3)]
        seeds: usize,
        #[arg(long, default_value_t = 1024)]
        samples: usize,
        #[arg(long, default_value_t = 10_000)]
        query_budget: u64,
        #[arg(long, default_value_t = 0)]
        attack_seed: u64,
        #[arg(long, default_value_t = 2000)]
        mi_steps: usize,
        #[arg(long, default_value_t = 256)]
        mi_batch: usize,
        #[arg(long, default_value_t = 1e-3)]
        mi_lr: f32,
        #[arg(long, default_value_t = 256)]
        mi_hidden: usize,
        #[arg(long)]
        data: Option<String>,
        #[arg(long, default_value_t = 0)]
        data_seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve the local half: decode latent frames, classify, reply.
    ServeEdge {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        port: u16,
        /// Reply with the predicted class only, suppressing scores.
        #[arg(long)]
        decision_only: bool,
        /// Exit after one session instead of accepting forever.
        #[arg(long)]
        once: bool,
    },
    /// Run the mobile half: push a dataset through the wire one latent
    /// frame at a time.
    ServeMobile {
        #[arg(long)]
        model: PathBuf,
        /// host:port of the edge.
        #[arg(long)]
        connect: String,
        #[arg(long)]
        data: String,
        #[arg(long, default_value_t = 0)]
        data_seed: u64,
        /// Samples to send.
        #[arg(long, default_value_t = 100)]
        n: usize,
    },
    /// Man-in-the-middle: perturb every latent frame within budget before
    /// forwarding it to the edge.
    Intercept {
        #[arg(long)]
        listen: u16,
        /// host:port of the edge.
        #[arg(long)]
        connect: String,
        #[arg(long)]
        algo: String,
        /// linf|l2; defaults to the attack's native norm.
        #[arg(long)]
        norm: Option<String>,
        #[arg(long)]
        eps: f64,
        #[arg(long, default_value_t = 10_000)]
        queries: u64,
        #[arg(long, default_value_t = 40)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Full-model package; required by gradient attacks.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Exit after one session instead of accepting forever.
        #[arg(long)]
        once: bool,
    },
    /// Run an experiment template and write its report bundle.
    Report {
        /// table1|depth|dimension|compression|attack-roster.
        #[arg(long)]
        template: String,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// csv|json.
        #[arg(long, default_value = "csv")]
        format: String,
    },
}

impl clap::ValueEnum for CampaignKind {
    fn value_variants<'a>() -> &'a [Self] {
        &[
            CampaignKind::Dpi,
            CampaignKind::Lemma2,
            CampaignKind::Thm2,
            CampaignKind::Cor1,
        ]
    }

    fn to_possible_value(&self) -> Option<clap::builder::PossibleValue> {
        Some(clap::builder::PossibleValue::new(match self {
            CampaignKind::Dpi => "dpi",
            CampaignKind::Lemma2 => "lemma2",
            CampaignKind::Thm2 => "thm2",
            CampaignKind::Cor1 => "cor1",
        }))
    }
}

/// Classifier training settings, read from a small TOML file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainFileConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f32,
    pub data_seed: u64,
}

impl Default for TrainFileConfig {
    fn default() -> Self {
        TrainFileConfig {
            epochs: 6,
            batch_size: 64,
            lr: 3e-3,
            data_seed: 0,
        }
    }
}

fn arch_splits(arch: ArchId) -> (NamedData, NamedData) {
    match arch {
        ArchId::MnistCnn => (NamedData::MnistTrain, NamedData::MnistTest),
        ArchId::VggCifar => (NamedData::CifarTrain, NamedData::CifarTest),
    }
}

fn test_split_for(model: &SplitModel, data: Option<&str>, seed: u64) -> Result<Dataset> {
    let which = match data {
        Some(name) => name.parse()?,
        None => arch_splits(model.arch).1,
    };
    Ok(load_named(which, seed))
}

/// "algo-norm" attack spec, e.g. pgd-linf or square-l2.
pub fn parse_attack_spec(spec: &str) -> Result<(Algorithm, Norm)> {
    let (algo, norm) = spec.rsplit_once('-').ok_or_else(|| {
        Error::validation(format!("bad attack spec {spec:?}, expected algo-norm"))
    })?;
    Ok((algo.parse()?, norm.parse()?))
}

/// "start:end:step" inclusive budget grid.
pub fn parse_eps_grid(spec: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    if parts.len() != 3 {
        return Err(Error::validation(format!(
            "bad grid {spec:?}, expected start:end:step"
        )));
    }
    let parse = |s: &str| {
        s.parse::<f64>()
            .map_err(|_| Error::validation(format!("bad number {s:?} in grid {spec:?}")))
    };
    let (start, end, step) = (parse(parts[0])?, parse(parts[1])?, parse(parts[2])?);
    if step <= 0.0 || end < start || start <= 0.0 {
        return Err(Error::validation(format!("degenerate grid {spec:?}")));
    }
    let count = ((end - start) / step).round() as usize;
    let grid: Vec<f64> = (0..=count)
        .map(|i| start + i as f64 * step)
        .filter(|&e| e <= end + 1e-12)
        .collect();
    Ok(grid)
}

fn write_manifest(path: &Path, manifest: &serde_json::Value) -> Result<PathBuf> {
    let manifest_path = path.with_extension("manifest.json");
    std::fs::write(&manifest_path, serde_json::to_string_pretty(manifest)?)?;
    Ok(manifest_path)
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

fn run_split(
    arch: String,
    split_index: usize,
    bottleneck_channels: Option<usize>,
    codec: Option<String>,
    out: PathBuf,
    seed: u64,
    config: Option<PathBuf>,
) -> Result<()> {
    let arch: ArchId = arch.parse()?;
    let train_cfg = match &config {
        Some(path) => toml::from_str(&std::fs::read_to_string(path)?)
            .map_err(|e| Error::validation(format!("bad training config: {e}")))?,
        None => TrainFileConfig::default(),
    };
    let (train_split, test_split) = arch_splits(arch);
    let train = load_named(train_split, train_cfg.data_seed);
    let test = load_named(test_split, train_cfg.data_seed);

    let mut graph = build_arch(arch, seed);
    let history = train_classifier(
        &mut graph,
        &train,
        train_cfg.epochs,
        train_cfg.batch_size,
        train_cfg.lr,
        seed,
    );
    eprintln!(
        "trained {arch:?}: loss {:.4}, train accuracy {:.4}",
        history.final_loss, history.train_accuracy
    );

    let mut model = split_model(arch, graph, split_index, seed)?;
    if let Some(channels) = bottleneck_channels {
        model = attach_bottleneck(model, channels)?;
    }
    if let Some(spec) = &codec {
        model.codec = Some(CompressionCodec::from_cli_spec(spec)?);
        model.calibrate_codec(&train, 512)?;
    }
    let accuracy = clean_accuracy(&mut model, &test)?;
    let packages = save_package_set(&model, &out)?;

    let manifest = serde_json::json!({
        "arch": model.arch,
        "split_index": model.split_index,
        "bottleneck_channels": bottleneck_channels,
        "codec": model.codec.as_ref().map(|c| c.cli_spec()),
        "seed": seed,
        "accuracy": accuracy,
        "train": {
            "epochs": train_cfg.epochs,
            "batch_size": train_cfg.batch_size,
            "lr": train_cfg.lr,
            "data_seed": train_cfg.data_seed,
            "final_loss": history.final_loss,
            "train_accuracy": history.train_accuracy,
        },
        "packages": packages,
    });
    let manifest_path = write_manifest(&out, &manifest)?;
    println!("{}", serde_json::to_string_pretty(&manifest)?);
    eprintln!("wrote {} and {}", out.display(), manifest_path.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn run_train_bottleneck(
    model_path: PathBuf,
    strategy: String,
    epochs: usize,
    seed: u64,
    batch_size: usize,
    lr: f32,
    rate_weight: f32,
    data_seed: u64,
    out: Option<PathBuf>,
) -> Result<()> {
    let mut model = load_package(&model_path)?;
    let strategy: StrategyKind = strategy.parse()?;
    let (train_split, test_split) = arch_splits(model.arch);
    let train = load_named(train_split, data_seed);
    let test = load_named(test_split, data_seed);
    let val = {
        let (images, labels) = test.batch(0, 256);
        Dataset {
            images,
            labels,
            num_classes: test.num_classes,
        }
    };
    let config = TrainConfig {
        strategy,
        epochs,
        batch_size,
        lr,
        seed,
        rate_weight,
    };
    let report = train_bottleneck(&mut model, &config, &train, &val)?;
    let accuracy = clean_accuracy(&mut model, &test)?;
    let out = out.unwrap_or(model_path);
    let packages = save_package_set(&model, &out)?;

    let manifest = serde_json::json!({
        "arch": model.arch,
        "split_index": model.split_index,
        "bottleneck_channels": model.bottleneck.as_ref().map(|b| b.channels),
        "codec": model.codec.as_ref().map(|c| c.cli_spec()),
        "seed": seed,
        "accuracy": accuracy,
        "bottleneck_training": report,
        "packages": packages,
    });
    let manifest_path = write_manifest(&out, &manifest)?;
    println!("{}", serde_json::to_string_pretty(&manifest)?);
    eprintln!("wrote {} and {}", out.display(), manifest_path.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn run_attack(
    model_path: PathBuf,
    space: String,
    algo: String,
    norm: String,
    eps: f64,
    steps: usize,
    queries: u64,
    n: usize,
    seed: u64,
    data: Option<String>,
    data_seed: u64,
    out: PathBuf,
) -> Result<()> {
    let mut model = load_package(&model_path)?;
    let space: Space = space.parse()?;
    let algorithm: Algorithm = algo.parse()?;
    let norm: Norm = norm.parse()?;
    let dataset_name = data
        .clone()
        .unwrap_or_else(|| match model.arch {
            ArchId::MnistCnn => "mnist-test".to_string(),
            ArchId::VggCifar => "cifar-test".to_string(),
        });
    let dataset = test_split_for(&model, data.as_deref(), data_seed)?;
    let eval = select_eval_set(&mut model, &dataset, &dataset_name, n, seed)?;
    let (images, labels) = eval.gather(&dataset)?;
    let ids: Vec<u64> = eval.sample_ids.iter().map(|i| *i as u64).collect();

    let x = match space {
        Space::Input => images,
        Space::Latent => model.forward_mobile(&images)?,
    };
    let budget = Budget::new(norm, eps, space, x.len() / x.dim().0)?;
    let mut config = AttackConfig::new(algorithm, budget)?;
    config.steps = steps;
    config.query_budget = queries;
    config.seed = seed;
    let outcome = attack_split_model(&mut model, &config, &x, &labels, &ids)?;

    let mut writer = csv::Writer::from_path(&out).map_err(|e| Error::Other(e.to_string()))?;
    writer
        .write_record([
            "sample_id", "algo", "space", "norm", "eps", "success", "queries", "achieved_norm",
        ])
        .map_err(|e| Error::Other(e.to_string()))?;
    for (i, &id) in eval.sample_ids.iter().enumerate() {
        let delta = outcome
            .deltas
            .index_axis(ndarray::Axis(0), i)
            .to_owned()
            .insert_axis(ndarray::Axis(0));
        writer
            .write_record([
                id.to_string(),
                algorithm.to_string(),
                space.to_string(),
                norm.to_string(),
                format!("{eps:.6}"),
                outcome.success[i].to_string(),
                outcome.queries[i].to_string(),
                format!("{:.6}", lp_norm(&delta, norm)),
            ])
            .map_err(|e| Error::Other(e.to_string()))?;
    }
    writer.flush()?;
    eprintln!(
        "attacked {} samples, success rate {:.4}, wrote {}",
        eval.len(),
        outcome.success_rate(),
        out.display()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn run_mi_estimate(
    model_path: PathBuf,
    attack: String,
    eps_grid: String,
    estimators: String,
    seeds: usize,
    samples: usize,
    query_budget: u64,
    attack_seed: u64,
    mi_steps: usize,
    mi_batch: usize,
    mi_lr: f32,
    mi_hidden: usize,
    data: Option<String>,
    data_seed: u64,
    out: PathBuf,
) -> Result<()> {
    let mut model = load_package(&model_path)?;
    let (algorithm, norm) = parse_attack_spec(&attack)?;
    let grid = parse_eps_grid(&eps_grid)?;
    let kinds: Vec<EstimatorKind> = estimators
        .split(',')
        .map(|s| s.trim().parse())
        .collect::<Result<_>>()?;
    if seeds == 0 {
        return Err(Error::validation("need at least one estimator seed".to_string()));
    }
    let dataset = test_split_for(&model, data.as_deref(), data_seed)?;

    let mut sweep = MiSweepConfig::new(algorithm, norm, grid.clone());
    sweep.kinds = kinds.clone();
    sweep.seeds = (0..seeds as u64).collect();
    sweep.eval_samples = samples;
    sweep.query_budget = query_budget;
    sweep.attack_seed = attack_seed;
    sweep.schedule = TrainSchedule {
        steps: mi_steps,
        batch: mi_batch,
        lr: mi_lr,
        hidden: mi_hidden,
    };
    let table = mi_under_attack(&mut model, &sweep, &dataset)?;

    let mut writer = csv::Writer::from_path(&out).map_err(|e| Error::Other(e.to_string()))?;
    writer
        .write_record([
            "eps", "estimator", "input_value", "latent_value", "input_acc", "latent_acc",
        ])
        .map_err(|e| Error::Other(e.to_string()))?;
    let fmt_opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
    for &eps in &grid {
        for &kind in &kinds {
            writer
                .write_record([
                    format!("{eps:.6}"),
                    kind.to_string(),
                    fmt_opt(table.cell(eps, Space::Input, kind).and_then(|c| c.value)),
                    fmt_opt(table.cell(eps, Space::Latent, kind).and_then(|c| c.value)),
                    fmt_opt(table.accuracy(eps, Space::Input)),
                    fmt_opt(table.accuracy(eps, Space::Latent)),
                ])
                .map_err(|e| Error::Other(e.to_string()))?;
        }
    }
    writer.flush()?;
    eprintln!("estimated {} cells, wrote {}", grid.len() * kinds.len() * 2, out.display());
    Ok(())
}

fn run_serve_edge(model_path: PathBuf, port: u16, decision_only: bool, once: bool) -> Result<()> {
    let mut model = load_package(&model_path)?;
    let listener = TcpListener::bind(("127.0.0.1", port))?;
    eprintln!("edge listening on {}", listener.local_addr()?);
    for stream in listener.incoming() {
        let mut stream = stream?;
        match serve_edge_session(&mut stream, &mut model, decision_only) {
            Ok(served) => eprintln!("session closed after {served} frames"),
            Err(e) => eprintln!("session aborted: {e}"),
        }
        if once {
            break;
        }
    }
    Ok(())
}

fn run_serve_mobile(
    model_path: PathBuf,
    connect: String,
    data: String,
    data_seed: u64,
    n: usize,
) -> Result<()> {
    let mut model = load_package(&model_path)?;
    let which: NamedData = data.parse()?;
    let dataset = load_named(which, data_seed);
    let count = n.min(dataset.len());
    let (images, labels) = dataset.batch(0, count);

    let mut stream = TcpStream::connect(&connect)?;
    let outcome = run_mobile_session(&mut stream, &mut model, &images);
    drop(stream);

    let preds = outcome.predictions();
    let mut agreements = 0usize;
    for (i, pred) in preds.iter().enumerate() {
        match pred {
            Some(p) => {
                if *p == labels[i] {
                    agreements += 1;
                }
                println!("sample {i}: predicted {p}, label {}", labels[i]);
            }
            None => println!("sample {i}: rejected"),
        }
    }
    let summary = serde_json::json!({
        "sent": count,
        "answered": preds.len(),
        "accuracy": if preds.is_empty() { 0.0 } else { agreements as f64 / preds.len() as f64 },
        "aborted": outcome.aborted,
    });
    println!("{}", serde_json::to_string_pretty(&summary)?);
    if outcome.aborted.is_some() {
        return Err(Error::Other("session aborted; partial results above".to_string()));
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn run_intercept(
    listen: u16,
    connect: String,
    algo: String,
    norm: Option<String>,
    eps: f64,
    queries: u64,
    steps: usize,
    seed: u64,
    model: Option<PathBuf>,
    once: bool,
) -> Result<()> {
    let algorithm: Algorithm = algo.parse()?;
    let norm: Norm = match norm {
        Some(n) => n.parse()?,
        None => {
            if algorithm.supports_norm(Norm::Linf) {
                Norm::Linf
            } else {
                Norm::L2
            }
        }
    };
    let mut plan = InterceptPlan::new(algorithm, norm, eps);
    plan.steps = steps;
    plan.query_budget = queries;
    plan.seed = seed;
    plan.model = match model {
        Some(path) => Some(load_package(&path)?),
        None => None,
    };

    let listener = TcpListener::bind(("127.0.0.1", listen))?;
    eprintln!("interceptor listening on {}", listener.local_addr()?);
    for stream in listener.incoming() {
        let mut mobile = stream?;
        let mut edge = TcpStream::connect(&connect)?;
        match run_interceptor_session(&mut mobile, &mut edge, &mut plan) {
            Ok(report) => println!("{}", serde_json::to_string_pretty(&report)?),
            Err(e) => eprintln!("session aborted: {e}"),
        }
        if once {
            break;
        }
    }
    Ok(())
}

fn run_report(template: String, config: PathBuf, out: PathBuf, format: String) -> Result<()> {
    let template: Template = template.parse()?;
    let format: ExportFormat = format.parse()?;
    let config = ExperimentConfig::from_path(&config)?;
    let bundle = run_experiment(template, &config)?;
    let mut files = export_results(&bundle, format, &out)?;
    files.extend(emit_plots(&bundle, &out)?);
    for file in &files {
        println!("{}", file.display());
    }
    if bundle.incomplete > 0 {
        eprintln!("{} cells failed; see the note column", bundle.incomplete);
    }
    Ok(())
}

pub fn run() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Theory {
            campaign,
            trials,
            seed,
            max_support,
        } => {
            let report = ib::run_campaign(campaign, trials, seed, max_support)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(())
        }
        Command::Split {
            arch,
            split_index,
            bottleneck_channels,
            codec,
            out,
            seed,
            config,
        } => run_split(arch, split_index, bottleneck_channels, codec, out, seed, config),
        Command::TrainBottleneck {
            model,
            strategy,
            epochs,
            seed,
            batch_size,
            lr,
            rate_weight,
            data_seed,
            out,
        } => run_train_bottleneck(
            model, strategy, epochs, seed, batch_size, lr, rate_weight, data_seed, out,
        ),
        Command::Attack {
            model,
            space,
            algo,
            norm,
            eps,
            steps,
            queries,
            n,
            seed,
            data,
            data_seed,
            out,
        } => run_attack(
            model, space, algo, norm, eps, steps, queries, n, seed, data, data_seed, out,
        ),
        Command::MiEstimate {
            model,
            attack,
            eps_grid,
            estimators,
            seeds,
            samples,
            query_budget,
            attack_seed,
            mi_steps,
            mi_batch,
            mi_lr,
            mi_hidden,
            data,
            data_seed,
            out,
        } => run_mi_estimate(
            model, attack, eps_grid, estimators, seeds, samples, query_budget, attack_seed,
            mi_steps, mi_batch, mi_lr, mi_hidden, data, data_seed, out,
        ),
        Command::ServeEdge {
            model,
            port,
            decision_only,
            once,
        } => run_serve_edge(model, port, decision_only, once),
        Command::ServeMobile {
            model,
            connect,
            data,
            data_seed,
            n,
        } => run_serve_mobile(model, connect, data, data_seed, n),
        Command::Intercept {
            listen,
            connect,
            algo,
            norm,
            eps,
            queries,
            steps,
            seed,
            model,
            once,
        } => run_intercept(listen, connect, algo, norm, eps, queries, steps, seed, model, once),
        Command::Report {
            template,
            config,
            out,
            format,
        } => run_report(template, config, out, format),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn attack_specs_split_on_the_last_dash() {
        assert_eq!(parse_attack_spec("pgd-linf").unwrap(), (Algorithm::Pgd, Norm::Linf));
        assert_eq!(parse_attack_spec("square-l2").unwrap(), (Algorithm::Square, Norm::L2));
        assert!(parse_attack_spec("pgd").is_err());
        assert!(parse_attack_spec("pgd-l3").is_err());
    }

    #[test]
    fn eps_grids_are_inclusive() {
        let grid = parse_eps_grid("0.01:0.10:0.01").unwrap();
        assert_eq!(grid.len(), 10);
        assert!((grid[0] - 0.01).abs() < 1e-12);
        assert!((grid[9] - 0.10).abs() < 1e-12);
        assert_eq!(parse_eps_grid("0.5:0.5:0.1").unwrap(), vec![0.5]);
        assert!(parse_eps_grid("0.1:0.01:0.01").is_err());
        assert!(parse_eps_grid("0:1").is_err());
        assert!(parse_eps_grid("a:b:c").is_err());
    }

    #[test]
    fn train_configs_default_sanely() {
        let cfg: TrainFileConfig = toml::from_str("epochs = 2").unwrap();
        assert_eq!(cfg.epochs, 2);
        assert_eq!(cfg.batch_size, TrainFileConfig::default().batch_size);
        assert!(toml::from_str::<TrainFileConfig>("epoch = 2").is_err());
    }
}
