//! The three endpoint roles: mobile sender, edge classifier, and the
//! man-in-the-middle interceptor.
//!
//! Sessions are lockstep over any reliable byte stream. The mobile runs the
//! front half and ships one latent frame per input; the edge decodes,
//! finishes inference and replies with the predicted class (scores included
//! unless suppressed). The interceptor sits between the two, learns the
//! clean prediction for each frame, perturbs the latent under its budget and
//! forwards the result. White-box algorithms need a copy of the weights;
//! black-box algorithms query the edge through the same connection they
//! tamper with, so their query accounting matches the in-process oracles.

use std::io::{Read, Write};

use ndarray::{Array1, Array4, Axis};

use super::frame::{decode_frame, encode_frame, FrameTensor};
use super::wire::{read_msg, write_msg, EdgeReply};
use crate::attacks::{
    apply_delta, attack_split_model, decision_attack, score_attack, AccessLevel, Algorithm,
    AttackConfig, AttackResult, Budget, LabelEvaluator, Norm, QueryCounter, ScoreEvaluator, Space,
};
use crate::error::{Error, Result};
use crate::nn::argmax_rows;
use crate::splitnet::SplitModel;

/// Serve one mobile (or interceptor) connection until the peer closes it.
/// Returns the number of frames answered. Malformed frames are rejected in
/// the reply and logged; the session keeps going.
pub fn serve_edge_session<S: Read + Write>(
    stream: &mut S,
    model: &mut SplitModel,
    decision_only: bool,
) -> Result<u64> {
    let mut served = 0u64;
    loop {
        let msg = match read_msg(stream)? {
            None => return Ok(served),
            Some(m) => m,
        };
        let reply = match classify_frame(&msg, model, decision_only) {
            Ok(r) => r,
            Err(e) => {
                eprintln!("edge: dropped frame {served}: {e}");
                EdgeReply::Rejected(e.to_string())
            }
        };
        write_msg(stream, &reply.encode())?;
        served += 1;
    }
}

fn classify_frame(msg: &[u8], model: &mut SplitModel, decision_only: bool) -> Result<EdgeReply> {
    let tensor = decode_frame(msg)?;
    let latent = match tensor {
        FrameTensor::F32(a) => a,
        other => {
            return Err(Error::validation(format!(
                "latent frames are float32, got dtype code {}",
                other.dtype_code()
            )))
        }
    };
    let latent: Array4<f32> = latent.into_dimensionality().map_err(|_| {
        Error::validation("latent frames are rank-4 (n, c, h, w)".to_string())
    })?;
    if latent.dim().0 != 1 {
        return Err(Error::validation(format!(
            "lockstep sessions carry one sample per frame, got {}",
            latent.dim().0
        )));
    }
    let logits = model.logits_from_latent(&latent)?;
    let pred = argmax_rows(&logits)[0];
    let scores = if decision_only {
        None
    } else {
        Some(logits.row(0).to_vec())
    };
    Ok(EdgeReply::Prediction { pred, scores })
}

/// What the mobile endpoint brought home.
#[derive(Debug, Clone)]
pub struct MobileOutcome {
    /// One reply per input that completed the round trip.
    pub replies: Vec<EdgeReply>,
    /// Why the session ended early, when it did.
    pub aborted: Option<String>,
}

impl MobileOutcome {
    /// Predicted classes, in input order; rejected frames yield `None`.
    pub fn predictions(&self) -> Vec<Option<usize>> {
        self.replies
            .iter()
            .map(|r| match r {
                EdgeReply::Prediction { pred, .. } => Some(*pred),
                EdgeReply::Rejected(_) => None,
            })
            .collect()
    }
}

/// Push every image through the mobile half and across the wire, one frame
/// at a time. A dead connection aborts the session but keeps the replies
/// gathered so far.
pub fn run_mobile_session<S: Read + Write>(
    stream: &mut S,
    model: &mut SplitModel,
    images: &Array4<f32>,
) -> MobileOutcome {
    let mut replies = Vec::with_capacity(images.dim().0);
    for i in 0..images.dim().0 {
        let image = images.index_axis(Axis(0), i).to_owned().insert_axis(Axis(0));
        let step = (|| -> Result<Option<EdgeReply>> {
            let latent = model.forward_mobile(&image)?;
            let bytes = encode_frame(&FrameTensor::F32(latent.into_dyn()))?;
            write_msg(stream, &bytes)?;
            match read_msg(stream)? {
                None => Ok(None),
                Some(raw) => Ok(Some(EdgeReply::decode(&raw)?)),
            }
        })();
        match step {
            Ok(Some(reply)) => replies.push(reply),
            Ok(None) => {
                return MobileOutcome {
                    replies,
                    aborted: Some("connection closed mid-session".to_string()),
                }
            }
            Err(e) => {
                return MobileOutcome {
                    replies,
                    aborted: Some(e.to_string()),
                }
            }
        }
    }
    MobileOutcome {
        replies,
        aborted: None,
    }
}

/// Score oracle backed by a live edge connection. Each probe is one frame
/// exchange and one unit of query budget.
pub struct WireScoreOracle<'a, S: Read + Write> {
    pub stream: &'a mut S,
    pub counter: QueryCounter,
}

/// Hard-label oracle backed by a live edge connection; works against
/// score-suppressed edges too.
pub struct WireLabelOracle<'a, S: Read + Write> {
    pub stream: &'a mut S,
    pub counter: QueryCounter,
}

fn exchange_latent<S: Read + Write>(stream: &mut S, t: &Array4<f32>) -> Result<EdgeReply> {
    let bytes = encode_frame(&FrameTensor::F32(t.to_owned().into_dyn()))?;
    write_msg(stream, &bytes)?;
    match read_msg(stream)? {
        None => Err(Error::protocol(
            0,
            "edge closed the connection mid-attack".to_string(),
        )),
        Some(raw) => EdgeReply::decode(&raw),
    }
}

impl<S: Read + Write> ScoreEvaluator for WireScoreOracle<'_, S> {
    fn scores_one(&mut self, t: &Array4<f32>) -> Result<Array1<f32>> {
        self.counter.charge(1)?;
        match exchange_latent(self.stream, t)? {
            EdgeReply::Prediction {
                scores: Some(s), ..
            } => Ok(Array1::from(s)),
            EdgeReply::Prediction { scores: None, .. } => Err(Error::capability(
                "edge suppresses scores; only decision attacks apply".to_string(),
            )),
            EdgeReply::Rejected(msg) => {
                Err(Error::validation(format!("edge rejected the probe: {msg}")))
            }
        }
    }

    fn queries_used(&self) -> u64 {
        self.counter.used
    }

    fn query_budget(&self) -> u64 {
        self.counter.budget
    }
}

impl<S: Read + Write> LabelEvaluator for WireLabelOracle<'_, S> {
    fn label_one(&mut self, t: &Array4<f32>) -> Result<usize> {
        self.counter.charge(1)?;
        match exchange_latent(self.stream, t)? {
            EdgeReply::Prediction { pred, .. } => Ok(pred),
            EdgeReply::Rejected(msg) => {
                Err(Error::validation(format!("edge rejected the probe: {msg}")))
            }
        }
    }

    fn queries_used(&self) -> u64 {
        self.counter.used
    }

    fn query_budget(&self) -> u64 {
        self.counter.budget
    }
}

/// Interceptor settings: the attack to mount and, for white-box algorithms,
/// the weights to mount it with.
#[derive(Debug, Clone)]
pub struct InterceptPlan {
    pub algorithm: Algorithm,
    pub norm: Norm,
    pub epsilon: f64,
    pub steps: usize,
    pub query_budget: u64,
    pub seed: u64,
    pub model: Option<SplitModel>,
}

impl InterceptPlan {
    pub fn new(algorithm: Algorithm, norm: Norm, epsilon: f64) -> InterceptPlan {
        InterceptPlan {
            algorithm,
            norm,
            epsilon,
            steps: 40,
            query_budget: 10_000,
            seed: 0,
            model: None,
        }
    }

    /// The exact attack configuration a frame of `dim` latent elements gets.
    pub fn attack_config(&self, dim: usize) -> Result<AttackConfig> {
        let budget = Budget::new(self.norm, self.epsilon, Space::Latent, dim)?;
        let mut config = AttackConfig::new(self.algorithm, budget)?;
        config.steps = self.steps;
        config.seed = self.seed;
        config.query_budget = self.query_budget;
        Ok(config)
    }
}

/// Per-session interception accounting, sample-aligned.
#[derive(Debug, Clone, Default, serde::Serialize)]
pub struct InterceptReport {
    pub samples: u64,
    /// Frames that were attackable (well-formed, accepted by the edge).
    pub attacked: u64,
    pub success: Vec<bool>,
    pub queries: Vec<u64>,
}

impl InterceptReport {
    pub fn successes(&self) -> u64 {
        self.success.iter().filter(|s| **s).count() as u64
    }
}

/// Relay one mobile session through an attack. For each latent frame: learn
/// the clean prediction from the edge (the label a field adversary can
/// observe), perturb within budget, forward the adversarial frame, and hand
/// the edge's reply back to the mobile. Frames that fail to parse pass
/// through untouched.
pub fn run_interceptor_session<M: Read + Write, E: Read + Write>(
    mobile: &mut M,
    edge: &mut E,
    plan: &mut InterceptPlan,
) -> Result<InterceptReport> {
    if plan.algorithm.access_level() == AccessLevel::Gradient && plan.model.is_none() {
        return Err(Error::validation(format!(
            "{} needs model weights on the interceptor",
            plan.algorithm
        )));
    }
    let mut report = InterceptReport::default();
    loop {
        let msg = match read_msg(mobile)? {
            None => return Ok(report),
            Some(m) => m,
        };
        let sample_id = report.samples;
        report.samples += 1;

        let latent: Option<Array4<f32>> = match decode_frame(&msg) {
            Ok(FrameTensor::F32(a)) if a.ndim() == 4 => {
                Some(a.into_dimensionality().expect("rank checked"))
            }
            _ => None,
        };
        let latent = match latent {
            Some(l) if l.dim().0 == 1 => l,
            _ => {
                eprintln!("interceptor: passing through frame {sample_id} unmodified");
                relay(edge, mobile, &msg)?;
                continue;
            }
        };

        write_msg(edge, &msg)?;
        let clean_raw = match read_msg(edge)? {
            None => return Err(Error::protocol(0, "edge closed the connection".to_string())),
            Some(raw) => raw,
        };
        let label = match EdgeReply::decode(&clean_raw) {
            Ok(EdgeReply::Prediction { pred, .. }) => pred,
            _ => {
                write_msg(mobile, &clean_raw)?;
                continue;
            }
        };

        let config = plan.attack_config(latent.len())?;
        let result = attack_frame(&config, plan, edge, &latent, label, sample_id)?;
        report.attacked += 1;
        report.success.push(result.success);
        report.queries.push(result.queries);

        let adv = apply_delta(&latent, &result.delta, Space::Latent);
        let reply = exchange_latent(edge, &adv)?;
        write_msg(mobile, &reply.encode())?;
    }
}

fn attack_frame<E: Read + Write>(
    config: &AttackConfig,
    plan: &mut InterceptPlan,
    edge: &mut E,
    latent: &Array4<f32>,
    label: usize,
    sample_id: u64,
) -> Result<AttackResult> {
    match config.algorithm.access_level() {
        AccessLevel::Gradient => {
            let model = plan.model.as_mut().expect("validated at session start");
            let outcome = attack_split_model(model, config, latent, &[label], &[sample_id])?;
            Ok(AttackResult {
                delta: outcome.deltas,
                success: outcome.success[0],
                queries: outcome.queries[0],
            })
        }
        AccessLevel::Score => {
            let mut oracle = WireScoreOracle {
                stream: edge,
                counter: QueryCounter::new(config.query_budget),
            };
            score_attack(&mut oracle, config, latent, label, sample_id)
        }
        AccessLevel::Decision => {
            let mut oracle = WireLabelOracle {
                stream: edge,
                counter: QueryCounter::new(config.query_budget),
            };
            decision_attack(&mut oracle, config, latent, label, sample_id)
        }
    }
}

fn relay<E: Read + Write, M: Read + Write>(edge: &mut E, mobile: &mut M, msg: &[u8]) -> Result<()> {
    write_msg(edge, msg)?;
    match read_msg(edge)? {
        None => Err(Error::protocol(0, "edge closed the connection".to_string())),
        Some(raw) => {
            write_msg(mobile, &raw)?;
            Ok(())
        }
    }
}
