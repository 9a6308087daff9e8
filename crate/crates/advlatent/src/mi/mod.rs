//! Neural mutual-information estimation between labels and latents.
//!
//! Five estimator families cover both bound directions: MINE, NWJ and CPC
//! approach the true value from below, CLUB and DoE from above. All critics
//! are small MLPs trained with Adam on (T, Y) sample pairs; marginal pairs are
//! built by rotating Y against T. `mi_under_attack` sweeps an attack over an
//! epsilon grid and reports per-cell estimates of I(Y; T) on the latent the
//! receiver actually sees, next to the accuracy the attack leaves behind.

mod critic;

use ndarray::{concatenate, Array2, Array4, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::attacks::{
    apply_delta, attack_split_model, Algorithm, AttackConfig, Budget, Norm, Space,
};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng::rng_for;
use crate::splitnet::{select_correct, SplitModel};
use critic::{all_finite, Mlp};

/// Minimum paired samples accepted for fitting a critic.
pub const MIN_FIT_SAMPLES: usize = 512;

const EMA_DECAY: f64 = 0.99;
const LOGVAR_RANGE: f32 = 6.0;
const LN_2PI: f64 = 1.837_877_066_409_345_3;
const CPC_EMBED: usize = 64;
const EVAL_CHUNK: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    Mine,
    Nwj,
    Cpc,
    Club,
    Doe,
}

/// Which side of the true mutual information a kind's estimate approaches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundDirection {
    Lower,
    Upper,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 5] = [
        EstimatorKind::Mine,
        EstimatorKind::Nwj,
        EstimatorKind::Cpc,
        EstimatorKind::Club,
        EstimatorKind::Doe,
    ];

    pub fn bound_direction(self) -> BoundDirection {
        match self {
            EstimatorKind::Mine | EstimatorKind::Nwj | EstimatorKind::Cpc => BoundDirection::Lower,
            EstimatorKind::Club | EstimatorKind::Doe => BoundDirection::Upper,
        }
    }
}

impl std::str::FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mine" => Ok(EstimatorKind::Mine),
            "nwj" => Ok(EstimatorKind::Nwj),
            "cpc" => Ok(EstimatorKind::Cpc),
            "club" => Ok(EstimatorKind::Club),
            "doe" => Ok(EstimatorKind::Doe),
            other => Err(Error::validation(format!("unknown estimator {other:?}"))),
        }
    }
}

impl std::fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EstimatorKind::Mine => "mine",
            EstimatorKind::Nwj => "nwj",
            EstimatorKind::Cpc => "cpc",
            EstimatorKind::Club => "club",
            EstimatorKind::Doe => "doe",
        })
    }
}

/// Critic training hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainSchedule {
    pub steps: usize,
    pub batch: usize,
    pub lr: f32,
    /// Width of both hidden layers.
    pub hidden: usize,
}

impl Default for TrainSchedule {
    fn default() -> TrainSchedule {
        TrainSchedule {
            steps: 2000,
            batch: 256,
            lr: 1e-3,
            hidden: 256,
        }
    }
}

/// One mutual-information reading, in nats.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MiEstimate {
    pub kind: EstimatorKind,
    pub value: f64,
    pub sample_count: usize,
    pub training_steps: usize,
    pub seed: u64,
}

#[derive(Debug)]
enum CriticState {
    Joint(Mlp),
    Towers(Mlp, Mlp),
    Conditional {
        net: Mlp,
        /// Per-dimension (mean, variance) of Y, used by DoE's marginal term.
        marginal: Option<(Vec<f64>, Vec<f64>)>,
    },
}

/// A trained critic, frozen; `estimate` is deterministic given the state.
#[derive(Debug)]
pub struct FittedEstimator {
    pub kind: EstimatorKind,
    pub seed: u64,
    /// True when the first fit diverged and the half-order-of-magnitude
    /// retry produced this state.
    pub retried: bool,
    state: CriticState,
    steps_run: usize,
    eval_batch: usize,
    dx: usize,
    dy: usize,
}

/// Labels as rows of a one-hot matrix.
pub fn one_hot(labels: &[usize], classes: usize) -> Result<Array2<f32>> {
    if classes == 0 {
        return Err(Error::validation("one-hot with zero classes".to_string()));
    }
    let mut out = Array2::zeros((labels.len(), classes));
    for (row, &label) in labels.iter().enumerate() {
        if label >= classes {
            return Err(Error::validation(format!(
                "label {label} outside {classes} classes"
            )));
        }
        out[(row, label)] = 1.0;
    }
    Ok(out)
}

/// Collapse (N, C, H, W) activations to (N, C*H*W) feature rows.
pub fn flatten_samples(t: &Array4<f32>) -> Array2<f32> {
    let (n, c, h, w) = t.dim();
    t.to_owned()
        .into_shape_with_order((n, c * h * w))
        .expect("contiguous tensor")
}

fn validate_pairs(t: &Array2<f32>, y: &Array2<f32>, min_rows: usize) -> Result<()> {
    if t.nrows() != y.nrows() {
        return Err(Error::validation(format!(
            "{} latent rows paired with {} label rows",
            t.nrows(),
            y.nrows()
        )));
    }
    if t.nrows() < min_rows {
        return Err(Error::validation(format!(
            "{} paired samples, need at least {min_rows}",
            t.nrows()
        )));
    }
    if t.ncols() == 0 || y.ncols() == 0 {
        return Err(Error::validation("zero-width samples".to_string()));
    }
    if !all_finite(t) || !all_finite(y) {
        return Err(Error::validation(
            "paired samples contain non-finite values".to_string(),
        ));
    }
    Ok(())
}

fn concat_cols(a: &Array2<f32>, b: &Array2<f32>) -> Array2<f32> {
    // concatenate along columns yields a column-major result; downstream
    // reshapes need row-major.
    let joined = concatenate(Axis(1), &[a.view(), b.view()]).expect("matching row counts");
    joined.as_standard_layout().into_owned()
}

fn rotate_rows(a: &Array2<f32>) -> Array2<f32> {
    let n = a.nrows();
    let idx: Vec<usize> = (0..n).map(|i| (i + 1) % n).collect();
    a.select(Axis(0), &idx)
}

fn logsumexp_row(row: &[f64]) -> f64 {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Gaussian head outputs: means in the left half, bounded log-variances in
/// the right. Returns (mu, logvar, raw) views as owned arrays.
fn split_gaussian_head(out: &Array2<f32>, dy: usize) -> (Array2<f32>, Array2<f32>) {
    let mu = out.slice(ndarray::s![.., ..dy]).to_owned();
    let raw = out.slice(ndarray::s![.., dy..]).to_owned();
    let logvar = raw.mapv(|r| LOGVAR_RANGE * (r / LOGVAR_RANGE).tanh());
    (mu, logvar)
}

fn gaussian_log_density(y: &Array2<f32>, mu: &Array2<f32>, logvar: &Array2<f32>) -> Vec<f64> {
    let n = y.nrows();
    let mut out = vec![0.0f64; n];
    for i in 0..n {
        let mut acc = 0.0f64;
        for d in 0..y.ncols() {
            let diff = (y[(i, d)] - mu[(i, d)]) as f64;
            let lv = logvar[(i, d)] as f64;
            acc += diff * diff * (-lv).exp() + lv + LN_2PI;
        }
        out[i] = -0.5 * acc;
    }
    out
}

fn train_joint(
    kind: EstimatorKind,
    net: &mut Mlp,
    tb: &Array2<f32>,
    yb: &Array2<f32>,
    ema: &mut Option<f64>,
) -> Option<f64> {
    let b = tb.nrows();
    let ym = rotate_rows(yb);
    let stacked = concatenate(
        Axis(0),
        &[concat_cols(tb, yb).view(), concat_cols(tb, &ym).view()],
    )
    .expect("same widths");
    let out = net.forward(&stacked);
    if !all_finite(&out) {
        return None;
    }
    let fj: Vec<f64> = (0..b).map(|i| out[(i, 0)] as f64).collect();
    let fm: Vec<f64> = (0..b).map(|i| out[(b + i, 0)] as f64).collect();
    let mean_fj = fj.iter().sum::<f64>() / b as f64;
    let mut dout = Array2::<f32>::zeros((2 * b, 1));
    let value = match kind {
        EstimatorKind::Mine => {
            let mean_exp = fm.iter().map(|v| v.exp()).sum::<f64>() / b as f64;
            let state = ema.get_or_insert(mean_exp);
            *state = EMA_DECAY * *state + (1.0 - EMA_DECAY) * mean_exp;
            let denom = state.max(1e-12);
            for i in 0..b {
                dout[(i, 0)] = -1.0 / b as f32;
                dout[(b + i, 0)] = (fm[i].exp() / (b as f64 * denom)) as f32;
            }
            mean_fj - mean_exp.ln()
        }
        EstimatorKind::Nwj => {
            let mean_exp1 = fm.iter().map(|v| (v - 1.0).exp()).sum::<f64>() / b as f64;
            for i in 0..b {
                dout[(i, 0)] = -1.0 / b as f32;
                dout[(b + i, 0)] = ((fm[i] - 1.0).exp() / b as f64) as f32;
            }
            mean_fj - mean_exp1
        }
        _ => unreachable!("joint critic kinds only"),
    };
    if !value.is_finite() || !all_finite(&dout) {
        return None;
    }
    net.backward(&dout);
    net.step();
    Some(value)
}

fn train_towers(g: &mut Mlp, h: &mut Mlp, tb: &Array2<f32>, yb: &Array2<f32>) -> Option<f64> {
    let b = tb.nrows();
    let gb = g.forward(tb);
    let hb = h.forward(yb);
    if !all_finite(&gb) || !all_finite(&hb) {
        return None;
    }
    let gf = gb.mapv(|v| v as f64);
    let hf = hb.mapv(|v| v as f64);
    let scores = gf.dot(&hf.t());
    let mut value = 0.0f64;
    let mut probs = Array2::<f64>::zeros((b, b));
    for i in 0..b {
        let row: Vec<f64> = scores.row(i).to_vec();
        let lse = logsumexp_row(&row);
        if !lse.is_finite() {
            return None;
        }
        value += scores[(i, i)] - lse;
        for j in 0..b {
            probs[(i, j)] = (scores[(i, j)] - lse).exp();
        }
    }
    value = value / b as f64 + (b as f64).ln();
    for i in 0..b {
        probs[(i, i)] -= 1.0;
    }
    probs /= b as f64;
    let dg = probs.dot(&hf).mapv(|v| v as f32);
    let dh = probs.t().dot(&gf).mapv(|v| v as f32);
    g.backward(&dg);
    h.backward(&dh);
    g.step();
    h.step();
    Some(value)
}

fn train_conditional(net: &mut Mlp, tb: &Array2<f32>, yb: &Array2<f32>) -> Option<f64> {
    let b = tb.nrows();
    let dy = yb.ncols();
    let out = net.forward(tb);
    if !all_finite(&out) {
        return None;
    }
    let (mu, logvar) = split_gaussian_head(&out, dy);
    let logq = gaussian_log_density(yb, &mu, &logvar);
    let loss = -logq.iter().sum::<f64>() / b as f64;
    if !loss.is_finite() {
        return None;
    }
    let mut dout = Array2::<f32>::zeros((b, 2 * dy));
    for i in 0..b {
        for d in 0..dy {
            let diff = mu[(i, d)] - yb[(i, d)];
            let lv = logvar[(i, d)];
            let inv_var = (-lv).exp();
            let dmu = diff * inv_var / b as f32;
            let dlv = 0.5 * (1.0 - diff * diff * inv_var) / b as f32;
            dout[(i, d)] = dmu;
            dout[(i, dy + d)] = dlv * (1.0 - (lv / LOGVAR_RANGE) * (lv / LOGVAR_RANGE));
        }
    }
    if !all_finite(&dout) {
        return None;
    }
    net.backward(&dout);
    net.step();
    Some(loss)
}

fn marginal_gaussian(y: &Array2<f32>) -> (Vec<f64>, Vec<f64>) {
    let n = y.nrows() as f64;
    let dy = y.ncols();
    let mut mean = vec![0.0f64; dy];
    let mut var = vec![0.0f64; dy];
    for d in 0..dy {
        let col = y.column(d);
        let m = col.iter().map(|&v| v as f64).sum::<f64>() / n;
        let v = col.iter().map(|&v| (v as f64 - m).powi(2)).sum::<f64>() / n;
        mean[d] = m;
        var[d] = v.max(1e-6);
    }
    (mean, var)
}

fn fit_once(
    kind: EstimatorKind,
    t: &Array2<f32>,
    y: &Array2<f32>,
    schedule: &TrainSchedule,
    lr: f32,
    seed: u64,
) -> Option<CriticState> {
    let n = t.nrows();
    let batch = schedule.batch.min(n);
    let (dx, dy) = (t.ncols(), y.ncols());
    let mut rng = rng_for(seed, kind as u64);
    let mut state = match kind {
        EstimatorKind::Mine | EstimatorKind::Nwj => CriticState::Joint(Mlp::new(
            &mut rng,
            &[dx + dy, schedule.hidden, schedule.hidden, 1],
            lr,
        )),
        EstimatorKind::Cpc => CriticState::Towers(
            Mlp::new(&mut rng, &[dx, schedule.hidden, schedule.hidden, CPC_EMBED], lr),
            Mlp::new(&mut rng, &[dy, schedule.hidden, schedule.hidden, CPC_EMBED], lr),
        ),
        EstimatorKind::Club | EstimatorKind::Doe => CriticState::Conditional {
            net: Mlp::new(&mut rng, &[dx, schedule.hidden, schedule.hidden, 2 * dy], lr),
            marginal: None,
        },
    };

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut cursor = 0usize;
    let mut ema: Option<f64> = None;
    for _ in 0..schedule.steps {
        if cursor + batch > n {
            order.shuffle(&mut rng);
            cursor = 0;
        }
        let idx = &order[cursor..cursor + batch];
        cursor += batch;
        let tb = t.select(Axis(0), idx);
        let yb = y.select(Axis(0), idx);
        let ok = match &mut state {
            CriticState::Joint(net) => train_joint(kind, net, &tb, &yb, &mut ema),
            CriticState::Towers(g, h) => train_towers(g, h, &tb, &yb),
            CriticState::Conditional { net, .. } => train_conditional(net, &tb, &yb),
        };
        if ok.is_none() {
            return None;
        }
    }

    let probe = batch.min(256);
    let tp = t.slice(ndarray::s![..probe, ..]).to_owned();
    let yp = y.slice(ndarray::s![..probe, ..]).to_owned();
    let settled = match &mut state {
        CriticState::Joint(net) => all_finite(&net.forward(&concat_cols(&tp, &yp))),
        CriticState::Towers(g, h) => all_finite(&g.forward(&tp)) && all_finite(&h.forward(&yp)),
        CriticState::Conditional { net, .. } => all_finite(&net.forward(&tp)),
    };
    if !settled {
        return None;
    }
    if kind == EstimatorKind::Doe {
        if let CriticState::Conditional { marginal, .. } = &mut state {
            *marginal = Some(marginal_gaussian(y));
        }
    }
    Some(state)
}

/// Train a critic of the given kind on paired (T, Y) samples.
///
/// A diverged run (non-finite loss or activations) is retried once at a
/// tenth of the learning rate before giving up.
pub fn fit_estimator(
    kind: EstimatorKind,
    t: &Array2<f32>,
    y: &Array2<f32>,
    schedule: &TrainSchedule,
    seed: u64,
) -> Result<FittedEstimator> {
    validate_pairs(t, y, MIN_FIT_SAMPLES)?;
    if schedule.steps == 0 || schedule.batch < 2 || schedule.hidden == 0 {
        return Err(Error::validation(format!(
            "schedule {schedule:?} cannot train a critic"
        )));
    }
    if !(schedule.lr.is_finite() && schedule.lr > 0.0) {
        return Err(Error::validation(format!(
            "learning rate {} out of range",
            schedule.lr
        )));
    }
    let (state, retried) = match fit_once(kind, t, y, schedule, schedule.lr, seed) {
        Some(state) => (state, false),
        None => match fit_once(kind, t, y, schedule, schedule.lr * 0.1, seed) {
            Some(state) => (state, true),
            None => {
                return Err(Error::Divergence(format!(
                    "{kind} critic diverged at learning rates {} and {}",
                    schedule.lr,
                    schedule.lr * 0.1
                )))
            }
        },
    };
    Ok(FittedEstimator {
        kind,
        seed,
        retried,
        state,
        steps_run: schedule.steps,
        eval_batch: schedule.batch,
        dx: t.ncols(),
        dy: y.ncols(),
    })
}

impl FittedEstimator {
    /// Evaluate the trained bound on a sample set. Deterministic: marginal
    /// pairs come from a fixed one-step rotation of Y.
    pub fn estimate(&mut self, t: &Array2<f32>, y: &Array2<f32>) -> Result<MiEstimate> {
        validate_pairs(t, y, 2)?;
        if t.ncols() != self.dx || y.ncols() != self.dy {
            return Err(Error::validation(format!(
                "samples are {}x{} features, critic was fitted on {}x{}",
                t.ncols(),
                y.ncols(),
                self.dx,
                self.dy
            )));
        }
        let n = t.nrows();
        let value = match &mut self.state {
            CriticState::Joint(net) => {
                let rot: Vec<usize> = (0..n).map(|i| (i + 1) % n).collect();
                let ym = y.select(Axis(0), &rot);
                let mut sum_fj = 0.0f64;
                let mut fm = Vec::with_capacity(n);
                let mut start = 0;
                while start < n {
                    let end = (start + EVAL_CHUNK).min(n);
                    let ts = t.slice(ndarray::s![start..end, ..]).to_owned();
                    let ys = y.slice(ndarray::s![start..end, ..]).to_owned();
                    let ms = ym.slice(ndarray::s![start..end, ..]).to_owned();
                    let fj = net.forward(&concat_cols(&ts, &ys));
                    let fmc = net.forward(&concat_cols(&ts, &ms));
                    sum_fj += fj.iter().map(|&v| v as f64).sum::<f64>();
                    fm.extend(fmc.iter().map(|&v| v as f64));
                    start = end;
                }
                let mean_fj = sum_fj / n as f64;
                match self.kind {
                    EstimatorKind::Mine => mean_fj - (logsumexp_row(&fm) - (n as f64).ln()),
                    EstimatorKind::Nwj => {
                        mean_fj - fm.iter().map(|v| (v - 1.0).exp()).sum::<f64>() / n as f64
                    }
                    _ => unreachable!("joint critic kinds only"),
                }
            }
            CriticState::Towers(g, h) => {
                let mut weighted = 0.0f64;
                let mut counted = 0usize;
                let mut start = 0;
                while start < n {
                    let end = (start + self.eval_batch).min(n);
                    let b = end - start;
                    if b < 2 {
                        break;
                    }
                    let ts = t.slice(ndarray::s![start..end, ..]).to_owned();
                    let ys = y.slice(ndarray::s![start..end, ..]).to_owned();
                    let gb = g.forward(&ts).mapv(|v| v as f64);
                    let hb = h.forward(&ys).mapv(|v| v as f64);
                    let scores = gb.dot(&hb.t());
                    for i in 0..b {
                        let row: Vec<f64> = scores.row(i).to_vec();
                        weighted += scores[(i, i)] - logsumexp_row(&row) + (b as f64).ln();
                    }
                    counted += b;
                    start = end;
                }
                if counted == 0 {
                    return Err(Error::validation(
                        "no evaluation chunk holds two samples".to_string(),
                    ));
                }
                weighted / counted as f64
            }
            CriticState::Conditional { net, marginal } => {
                let rot: Vec<usize> = (0..n).map(|i| (i + 1) % n).collect();
                let ym = y.select(Axis(0), &rot);
                let mut joint = 0.0f64;
                let mut other = 0.0f64;
                let mut start = 0;
                while start < n {
                    let end = (start + EVAL_CHUNK).min(n);
                    let ts = t.slice(ndarray::s![start..end, ..]).to_owned();
                    let ys = y.slice(ndarray::s![start..end, ..]).to_owned();
                    let out = net.forward(&ts);
                    let (mu, logvar) = split_gaussian_head(&out, self.dy);
                    joint += gaussian_log_density(&ys, &mu, &logvar).iter().sum::<f64>();
                    match marginal {
                        None => {
                            let ms = ym.slice(ndarray::s![start..end, ..]).to_owned();
                            other += gaussian_log_density(&ms, &mu, &logvar).iter().sum::<f64>();
                        }
                        Some((mean, var)) => {
                            for i in 0..(end - start) {
                                let mut acc = 0.0f64;
                                for d in 0..self.dy {
                                    let diff = ys[(i, d)] as f64 - mean[d];
                                    acc += diff * diff / var[d] + var[d].ln() + LN_2PI;
                                }
                                other += -0.5 * acc;
                            }
                        }
                    }
                    start = end;
                }
                (joint - other) / n as f64
            }
        };
        if !value.is_finite() {
            return Err(Error::Divergence(format!(
                "{} estimate is not finite",
                self.kind
            )));
        }
        Ok(MiEstimate {
            kind: self.kind,
            value,
            sample_count: n,
            training_steps: self.steps_run,
            seed: self.seed,
        })
    }
}

/// Fit and evaluate on the same sample set.
pub fn fit_and_estimate(
    kind: EstimatorKind,
    t: &Array2<f32>,
    y: &Array2<f32>,
    schedule: &TrainSchedule,
    seed: u64,
) -> Result<MiEstimate> {
    fit_estimator(kind, t, y, schedule, seed)?.estimate(t, y)
}

/// Median estimate over several seeds; the reading with the median value is
/// returned whole (even seed counts average the two middle values).
pub fn median_estimate(
    kind: EstimatorKind,
    t: &Array2<f32>,
    y: &Array2<f32>,
    schedule: &TrainSchedule,
    seeds: &[u64],
) -> Result<MiEstimate> {
    if seeds.is_empty() {
        return Err(Error::validation("no seeds given".to_string()));
    }
    let mut runs = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        runs.push(fit_and_estimate(kind, t, y, schedule, seed)?);
    }
    runs.sort_by(|a, b| a.value.total_cmp(&b.value));
    let mid = runs.len() / 2;
    if runs.len() % 2 == 1 {
        Ok(runs.swap_remove(mid))
    } else {
        let value = 0.5 * (runs[mid - 1].value + runs[mid].value);
        let mut out = runs.swap_remove(mid - 1);
        out.value = value;
        Ok(out)
    }
}

/// Sweep settings for `mi_under_attack`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MiSweepConfig {
    pub algorithm: Algorithm,
    pub norm: Norm,
    pub eps_grid: Vec<f64>,
    pub kinds: Vec<EstimatorKind>,
    pub schedule: TrainSchedule,
    /// Correctly-classified samples to attack and estimate on.
    pub eval_samples: usize,
    /// Estimator seeds; cells report the median over them.
    pub seeds: Vec<u64>,
    pub attack_seed: u64,
    pub query_budget: u64,
}

impl MiSweepConfig {
    pub fn new(algorithm: Algorithm, norm: Norm, eps_grid: Vec<f64>) -> MiSweepConfig {
        MiSweepConfig {
            algorithm,
            norm,
            eps_grid,
            kinds: EstimatorKind::ALL.to_vec(),
            schedule: TrainSchedule::default(),
            eval_samples: 1024,
            seeds: vec![0, 1, 2],
            attack_seed: 0,
            query_budget: 10_000,
        }
    }
}

/// One (epsilon, space, kind) reading. A failed cell carries the error text
/// instead of a value.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MiSweepCell {
    pub epsilon: f64,
    pub space: Space,
    pub kind: EstimatorKind,
    pub value: Option<f64>,
    pub note: Option<String>,
}

/// Accuracy left by the attack at one (epsilon, space) grid point.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MiSweepPoint {
    pub epsilon: f64,
    pub space: Space,
    pub accuracy: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MiSweepTable {
    pub cells: Vec<MiSweepCell>,
    pub points: Vec<MiSweepPoint>,
    pub sample_count: usize,
}

impl MiSweepTable {
    pub fn cell(&self, epsilon: f64, space: Space, kind: EstimatorKind) -> Option<&MiSweepCell> {
        self.cells
            .iter()
            .find(|c| c.epsilon == epsilon && c.space == space && c.kind == kind)
    }

    pub fn accuracy(&self, epsilon: f64, space: Space) -> Option<f64> {
        self.points
            .iter()
            .find(|p| p.epsilon == epsilon && p.space == space)
            .map(|p| p.accuracy)
    }
}

fn received_latent(model: &SplitModel, latent: Array4<f32>) -> Result<Array4<f32>> {
    match &model.codec {
        Some(codec) => codec.round_trip(&latent),
        None => Ok(latent),
    }
}

/// Attack the model over an epsilon grid in both input and latent space,
/// then estimate I(Y; T) on the latent the receiver decodes. Estimator
/// failures mark their cell and the sweep continues.
pub fn mi_under_attack(
    model: &mut SplitModel,
    config: &MiSweepConfig,
    data: &Dataset,
) -> Result<MiSweepTable> {
    if config.eps_grid.is_empty() || config.kinds.is_empty() || config.seeds.is_empty() {
        return Err(Error::validation(
            "sweep needs at least one epsilon, kind and seed".to_string(),
        ));
    }
    if config.eval_samples < MIN_FIT_SAMPLES {
        return Err(Error::validation(format!(
            "{} eval samples, estimators need at least {MIN_FIT_SAMPLES}",
            config.eval_samples
        )));
    }
    for &eps in &config.eps_grid {
        if !(eps.is_finite() && eps >= 0.0) {
            return Err(Error::validation(format!("epsilon {eps} out of range")));
        }
    }

    let (x, labels) = select_correct(model, data, config.eval_samples)?;
    let n = labels.len();
    let ids: Vec<u64> = (0..n as u64).collect();
    let y = one_hot(&labels, model.num_classes())?;
    let clean_latent = model.forward_mobile(&x)?;

    let mut cells = Vec::new();
    let mut points = Vec::new();
    for space in [Space::Input, Space::Latent] {
        let clean: &Array4<f32> = match space {
            Space::Input => &x,
            Space::Latent => &clean_latent,
        };
        let dim = clean.len() / n;
        for &eps in &config.eps_grid {
            let received = if eps == 0.0 {
                received_latent(model, clean_latent.clone())?
            } else {
                let budget = Budget::new(config.norm, eps, space, dim)?;
                let mut attack = AttackConfig::new(config.algorithm, budget)?;
                attack.seed = config.attack_seed;
                attack.query_budget = config.query_budget;
                let outcome = attack_split_model(model, &attack, clean, &labels, &ids)?;
                let adv = apply_delta(clean, &outcome.deltas, space);
                match space {
                    Space::Input => {
                        let latent = model.forward_mobile(&adv)?;
                        received_latent(model, latent)?
                    }
                    Space::Latent => received_latent(model, adv)?,
                }
            };
            let preds = crate::nn::argmax_rows(&model.forward_local(&received)?);
            let hits = preds.iter().zip(&labels).filter(|(p, l)| p == l).count();
            points.push(MiSweepPoint {
                epsilon: eps,
                space,
                accuracy: hits as f64 / n as f64,
            });
            let t_flat = flatten_samples(&received);
            for &kind in &config.kinds {
                let cell = match median_estimate(kind, &t_flat, &y, &config.schedule, &config.seeds)
                {
                    Ok(est) => MiSweepCell {
                        epsilon: eps,
                        space,
                        kind,
                        value: Some(est.value),
                        note: None,
                    },
                    Err(err) => MiSweepCell {
                        epsilon: eps,
                        space,
                        kind,
                        value: None,
                        note: Some(err.to_string()),
                    },
                };
                cells.push(cell);
            }
        }
    }
    Ok(MiSweepTable {
        cells,
        points,
        sample_count: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ib::dist::{mutual_information, FiniteDistribution};
    use crate::rng::rng_from;
    use rand_distr::StandardNormal;

    fn test_schedule() -> TrainSchedule {
        TrainSchedule {
            steps: 700,
            batch: 256,
            lr: 2e-3,
            hidden: 48,
        }
    }

    const TEST_SEEDS: [u64; 3] = [11, 12, 13];

    /// z uniform over 4 symbols, y = z with probability 0.7, else one of the
    /// other three symbols with probability 0.1 each.
    fn noisy_symbols(n: usize, seed: u64) -> (Array2<f32>, Array2<f32>, f64) {
        use rand::Rng;
        let mut rng = rng_from(seed);
        let mut zs = Vec::with_capacity(n);
        let mut ys = Vec::with_capacity(n);
        for _ in 0..n {
            let z = rng.random_range(0..4usize);
            let roll: f64 = rng.random();
            let y = if roll < 0.7 {
                z
            } else {
                let others: Vec<usize> = (0..4).filter(|&c| c != z).collect();
                others[((roll - 0.7) / 0.1).floor() as usize % 3]
            };
            zs.push(z);
            ys.push(y);
        }
        let mut joint = vec![0.0f64; 16];
        for z in 0..4 {
            for y in 0..4 {
                joint[z * 4 + y] = 0.25 * if z == y { 0.7 } else { 0.1 };
            }
        }
        let exact =
            mutual_information(&FiniteDistribution::new(&[4, 4], joint).unwrap()).unwrap();
        (
            one_hot(&zs, 4).unwrap(),
            one_hot(&ys, 4).unwrap(),
            exact,
        )
    }

    fn gaussian_pair(n: usize, rho: f32, seed: u64) -> (Array2<f32>, Array2<f32>, f64) {
        use rand::Rng;
        let mut rng = rng_from(seed);
        let mut t = Array2::zeros((n, 1));
        let mut y = Array2::zeros((n, 1));
        for i in 0..n {
            let a: f32 = rng.sample(StandardNormal);
            let b: f32 = rng.sample(StandardNormal);
            t[(i, 0)] = a;
            y[(i, 0)] = rho * a + (1.0 - rho * rho).sqrt() * b;
        }
        let exact = -0.5 * (1.0 - (rho as f64) * (rho as f64)).ln();
        (t, y, exact)
    }

    #[test]
    fn kinds_parse_and_classify() {
        for kind in EstimatorKind::ALL {
            assert_eq!(kind.to_string().parse::<EstimatorKind>().unwrap(), kind);
        }
        assert_eq!(
            EstimatorKind::Mine.bound_direction(),
            BoundDirection::Lower
        );
        assert_eq!(EstimatorKind::Cpc.bound_direction(), BoundDirection::Lower);
        assert_eq!(EstimatorKind::Club.bound_direction(), BoundDirection::Upper);
        assert_eq!(EstimatorKind::Doe.bound_direction(), BoundDirection::Upper);
        assert!("tsne".parse::<EstimatorKind>().is_err());
    }

    #[test]
    fn one_hot_and_flatten_shapes() {
        let y = one_hot(&[2, 0, 1], 3).unwrap();
        assert_eq!(y.dim(), (3, 3));
        assert_eq!(y.row(0).to_vec(), vec![0.0, 0.0, 1.0]);
        assert!(one_hot(&[3], 3).is_err());
        let t = Array4::from_shape_fn((2, 3, 2, 2), |(n, c, h, w)| {
            (n * 100 + c * 10 + h * 2 + w) as f32
        });
        let flat = flatten_samples(&t);
        assert_eq!(flat.dim(), (2, 12));
        assert_eq!(flat[(1, 0)], 100.0);
        assert_eq!(flat[(0, 11)], 23.0);
    }

    #[test]
    fn independent_pairs_score_near_zero_for_lower_bounds() {
        use rand::Rng;
        let mut rng = rng_from(5);
        let n = 2048;
        let t = Array2::from_shape_fn((n, 2), |_| rng.sample::<f32, _>(StandardNormal));
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..4usize)).collect();
        let y = one_hot(&labels, 4).unwrap();
        for kind in [EstimatorKind::Mine, EstimatorKind::Nwj, EstimatorKind::Cpc] {
            let est = median_estimate(kind, &t, &y, &test_schedule(), &TEST_SEEDS).unwrap();
            assert!(
                est.value.abs() <= 0.1,
                "{kind} reads {} on independent pairs",
                est.value
            );
        }
    }

    #[test]
    fn deterministic_labels_approach_the_entropy_ceiling() {
        use rand::Rng;
        let mut rng = rng_from(6);
        let n = 2048;
        let mut t = Array2::zeros((n, 2));
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let z = rng.random_range(0..4usize);
            let (cx, cy) = [(2.0, 2.0), (2.0, -2.0), (-2.0, 2.0), (-2.0, -2.0)][z];
            t[(i, 0)] = cx + 0.3 * rng.sample::<f32, _>(StandardNormal);
            t[(i, 1)] = cy + 0.3 * rng.sample::<f32, _>(StandardNormal);
            labels.push(z);
        }
        let y = one_hot(&labels, 4).unwrap();
        let ceiling = 4.0f64.ln();
        for kind in [EstimatorKind::Mine, EstimatorKind::Nwj, EstimatorKind::Cpc] {
            let est = median_estimate(kind, &t, &y, &test_schedule(), &TEST_SEEDS).unwrap();
            assert!(
                est.value <= ceiling + 0.05,
                "{kind} reads {} above ln 4",
                est.value
            );
            assert!(
                est.value >= ceiling - 0.4,
                "{kind} reads {} far below ln 4",
                est.value
            );
        }
    }

    #[test]
    fn bounds_sandwich_the_exact_value_on_a_discrete_channel() {
        let (t, y, exact) = noisy_symbols(4096, 7);
        for kind in EstimatorKind::ALL {
            let est = median_estimate(kind, &t, &y, &test_schedule(), &TEST_SEEDS).unwrap();
            match kind.bound_direction() {
                BoundDirection::Lower => {
                    assert!(
                        est.value <= exact + 0.05,
                        "{kind} reads {} above exact {exact}",
                        est.value
                    );
                    assert!(
                        est.value >= exact - 0.35,
                        "{kind} reads {} far below exact {exact}",
                        est.value
                    );
                }
                BoundDirection::Upper => {
                    assert!(
                        est.value >= exact - 0.05,
                        "{kind} reads {} below exact {exact}",
                        est.value
                    );
                }
            }
        }
    }

    #[test]
    fn correlated_gaussians_match_the_closed_form() {
        let (t, y, exact) = gaussian_pair(4096, 0.8, 8);
        for kind in [
            EstimatorKind::Mine,
            EstimatorKind::Nwj,
            EstimatorKind::Cpc,
            EstimatorKind::Doe,
        ] {
            let est = median_estimate(kind, &t, &y, &test_schedule(), &TEST_SEEDS).unwrap();
            assert!(
                (est.value - exact).abs() <= 0.15 * exact,
                "{kind} reads {} against closed form {exact}",
                est.value
            );
        }
        let club =
            median_estimate(EstimatorKind::Club, &t, &y, &test_schedule(), &TEST_SEEDS).unwrap();
        let rho2 = 0.8f64 * 0.8;
        let club_ideal = rho2 / (1.0 - rho2);
        assert!(
            club.value >= exact - 0.05,
            "club reads {} below exact {exact}",
            club.value
        );
        assert!(
            club.value <= club_ideal * 1.3,
            "club reads {} far above its analytic value {club_ideal}",
            club.value
        );
    }

    #[test]
    fn estimates_are_reproducible_per_seed() {
        let (t, y, _) = noisy_symbols(1024, 9);
        let schedule = TrainSchedule {
            steps: 60,
            batch: 128,
            lr: 1e-3,
            hidden: 32,
        };
        for kind in EstimatorKind::ALL {
            let a = fit_and_estimate(kind, &t, &y, &schedule, 21).unwrap();
            let b = fit_and_estimate(kind, &t, &y, &schedule, 21).unwrap();
            assert!(
                (a.value - b.value).abs() <= 1e-6,
                "{kind}: {} vs {}",
                a.value,
                b.value
            );
            let c = fit_and_estimate(kind, &t, &y, &schedule, 22).unwrap();
            assert_ne!(a.value, c.value, "{kind} ignores its seed");
        }
    }

    #[test]
    fn absurd_learning_rates_diverge_after_one_retry() {
        let (t, y, _) = noisy_symbols(1024, 10);
        let schedule = TrainSchedule {
            steps: 40,
            batch: 128,
            lr: 1e9,
            hidden: 32,
        };
        let err = fit_estimator(EstimatorKind::Mine, &t, &y, &schedule, 0).unwrap_err();
        assert!(matches!(err, Error::Divergence(_)), "{err}");
        let msg = err.to_string();
        assert!(msg.contains("1e9") || msg.contains("1000000000"), "{msg}");
    }

    #[test]
    fn sane_fits_do_not_retry() {
        let (t, y, _) = noisy_symbols(1024, 14);
        let schedule = TrainSchedule {
            steps: 60,
            batch: 128,
            lr: 1e-3,
            hidden: 32,
        };
        let fitted = fit_estimator(EstimatorKind::Club, &t, &y, &schedule, 3).unwrap();
        assert!(!fitted.retried);
    }

    #[test]
    fn malformed_pairs_are_rejected() {
        let (t, y, _) = noisy_symbols(1024, 11);
        let schedule = TrainSchedule {
            steps: 40,
            batch: 128,
            lr: 1e-3,
            hidden: 32,
        };
        let short = t.slice(ndarray::s![..400, ..]).to_owned();
        let short_y = y.slice(ndarray::s![..400, ..]).to_owned();
        assert!(fit_estimator(EstimatorKind::Nwj, &short, &short_y, &schedule, 0).is_err());
        let mut fitted = fit_estimator(EstimatorKind::Nwj, &t, &y, &schedule, 0).unwrap();
        let wide = Array2::zeros((16, 9));
        let narrow_y = y.slice(ndarray::s![..16, ..]).to_owned();
        assert!(fitted.estimate(&wide, &narrow_y).is_err());
        let one_t = t.slice(ndarray::s![..1, ..]).to_owned();
        let one_y = y.slice(ndarray::s![..1, ..]).to_owned();
        assert!(fitted.estimate(&one_t, &one_y).is_err());
    }

    #[test]
    fn sweep_configs_are_validated_before_any_work() {
        let data = crate::data::digits::generate(1, 0, 16);
        let graph = crate::splitnet::model::mnist_cnn(1);
        let mut model = crate::splitnet::split_model(
            crate::splitnet::ArchId::MnistCnn,
            graph,
            2,
            1,
        )
        .unwrap();
        let mut config = MiSweepConfig::new(Algorithm::Pgd, Norm::Linf, vec![0.05]);
        config.eval_samples = 100;
        assert!(mi_under_attack(&mut model, &config, &data).is_err());
        let mut empty = MiSweepConfig::new(Algorithm::Pgd, Norm::Linf, vec![]);
        empty.eval_samples = MIN_FIT_SAMPLES;
        assert!(mi_under_attack(&mut model, &empty, &data).is_err());
        let mut bad_eps = MiSweepConfig::new(Algorithm::Pgd, Norm::Linf, vec![-0.1]);
        bad_eps.eval_samples = MIN_FIT_SAMPLES;
        assert!(mi_under_attack(&mut model, &bad_eps, &data).is_err());
    }
}
