//! Adversarial perturbation search against split inference pipelines.
//!
//! Attacks operate either on the model input or on the transmitted latent
//! tensor, under an l2 or l-infinity budget. White-box algorithms consume
//! loss gradients; black-box algorithms consume query-counted score vectors
//! or hard labels. Every attack returns a perturbation that satisfies its
//! budget, falling back to the zero perturbation when the search fails.

mod budget;
pub mod dct;
mod decision;
mod gradient;
mod oracle;
mod score;

pub use budget::{apply_delta, budget_to_sigma, lp_norm, project_lp, Budget, Norm, Space};
pub use decision::decision_attack;
pub use gradient::gradient_attack;
pub use score::{margin, score_attack};
pub use oracle::{
    GradientEvaluator, LabelEvaluator, LinearOracle, QueryCounter, ScoreEvaluator,
    SplitGradientOracle, SplitLabelOracle, SplitScoreOracle,
};

use ndarray::{Array4, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::splitnet::SplitModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Fgsm,
    Bim,
    Mim,
    Pgd,
    Nes,
    Nattack,
    Square,
    Eatk,
    Signopt,
    Triangle,
}

/// Access level an algorithm needs from the attacked pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AccessLevel {
    Gradient,
    Score,
    Decision,
}

impl Algorithm {
    pub const ALL: [Algorithm; 10] = [
        Algorithm::Fgsm,
        Algorithm::Bim,
        Algorithm::Mim,
        Algorithm::Pgd,
        Algorithm::Nes,
        Algorithm::Nattack,
        Algorithm::Square,
        Algorithm::Eatk,
        Algorithm::Signopt,
        Algorithm::Triangle,
    ];

    pub fn access_level(self) -> AccessLevel {
        match self {
            Algorithm::Fgsm | Algorithm::Bim | Algorithm::Mim | Algorithm::Pgd => {
                AccessLevel::Gradient
            }
            Algorithm::Nes | Algorithm::Nattack | Algorithm::Square => AccessLevel::Score,
            Algorithm::Eatk | Algorithm::Signopt | Algorithm::Triangle => AccessLevel::Decision,
        }
    }

    pub fn supports_norm(self, norm: Norm) -> bool {
        match self {
            Algorithm::Pgd => true,
            Algorithm::Fgsm
            | Algorithm::Bim
            | Algorithm::Mim
            | Algorithm::Nes
            | Algorithm::Nattack
            | Algorithm::Square => norm == Norm::Linf,
            Algorithm::Eatk | Algorithm::Signopt | Algorithm::Triangle => norm == Norm::L2,
        }
    }
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fgsm" => Ok(Algorithm::Fgsm),
            "bim" => Ok(Algorithm::Bim),
            "mim" => Ok(Algorithm::Mim),
            "pgd" => Ok(Algorithm::Pgd),
            "nes" => Ok(Algorithm::Nes),
            "nattack" => Ok(Algorithm::Nattack),
            "square" => Ok(Algorithm::Square),
            "eatk" => Ok(Algorithm::Eatk),
            "signopt" => Ok(Algorithm::Signopt),
            "triangle" => Ok(Algorithm::Triangle),
            other => Err(Error::validation(format!("unknown attack {other:?}"))),
        }
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Algorithm::Fgsm => "fgsm",
            Algorithm::Bim => "bim",
            Algorithm::Mim => "mim",
            Algorithm::Pgd => "pgd",
            Algorithm::Nes => "nes",
            Algorithm::Nattack => "nattack",
            Algorithm::Square => "square",
            Algorithm::Eatk => "eatk",
            Algorithm::Signopt => "signopt",
            Algorithm::Triangle => "triangle",
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackConfig {
    pub algorithm: Algorithm,
    pub budget: Budget,
    /// Iterations for iterative white-box attacks.
    pub steps: usize,
    /// Per-step size; `None` uses 2.5 sigma / steps.
    pub step_size: Option<f32>,
    /// Gradient momentum decay, used by mim.
    pub momentum: f32,
    /// Oracle call allowance for black-box attacks.
    pub query_budget: u64,
    /// Antithetic pairs (nes) or candidate population (nattack) per step;
    /// `None` uses each algorithm's default.
    pub samples_per_step: Option<usize>,
    pub seed: u64,
}

impl AttackConfig {
    pub fn new(algorithm: Algorithm, budget: Budget) -> Result<AttackConfig> {
        if !algorithm.supports_norm(budget.norm) {
            return Err(Error::validation(format!(
                "{algorithm} does not run under the {} norm",
                budget.norm
            )));
        }
        Ok(AttackConfig {
            algorithm,
            budget,
            steps: 40,
            step_size: None,
            momentum: 1.0,
            query_budget: 10_000,
            samples_per_step: None,
            seed: 0,
        })
    }

    pub fn effective_step_size(&self) -> f32 {
        self.step_size
            .unwrap_or(2.5 * self.budget.sigma / self.steps.max(1) as f32)
    }
}

/// Outcome for one attacked sample.
#[derive(Debug, Clone)]
pub struct AttackResult {
    /// Perturbation with a leading batch axis of one.
    pub delta: Array4<f32>,
    pub success: bool,
    pub queries: u64,
}

/// Outcome for a batch, sample-aligned with the inputs.
#[derive(Debug, Clone)]
pub struct BatchAttackOutcome {
    pub deltas: Array4<f32>,
    pub success: Vec<bool>,
    pub queries: Vec<u64>,
}

impl BatchAttackOutcome {
    pub fn success_rate(&self) -> f64 {
        if self.success.is_empty() {
            return 0.0;
        }
        self.success.iter().filter(|s| **s).count() as f64 / self.success.len() as f64
    }
}

/// Attack a batch through a split model, routing by the algorithm's access
/// level. For latent-space budgets `x` must hold the transmitted latents.
/// Black-box samples each get a fresh query allowance of
/// `config.query_budget`.
pub fn attack_split_model(
    model: &mut SplitModel,
    config: &AttackConfig,
    x: &Array4<f32>,
    labels: &[usize],
    ids: &[u64],
) -> Result<BatchAttackOutcome> {
    let n = x.dim().0;
    if labels.len() != n || ids.len() != n {
        return Err(Error::validation(format!(
            "batch of {n} samples with {} labels and {} ids",
            labels.len(),
            ids.len()
        )));
    }
    match config.algorithm.access_level() {
        AccessLevel::Gradient => {
            let mut oracle = SplitGradientOracle {
                model,
                space: config.budget.space,
            };
            gradient_attack(&mut oracle, config, x, labels, ids)
        }
        AccessLevel::Score | AccessLevel::Decision => {
            let mut deltas = Array4::<f32>::zeros(x.dim());
            let mut success = Vec::with_capacity(n);
            let mut queries = Vec::with_capacity(n);
            for i in 0..n {
                let xi = x.index_axis(Axis(0), i).to_owned().insert_axis(Axis(0));
                let result = if config.algorithm.access_level() == AccessLevel::Score {
                    let mut oracle =
                        SplitScoreOracle::new(model, config.budget.space, config.query_budget);
                    score_attack(&mut oracle, config, &xi, labels[i], ids[i])?
                } else {
                    let mut oracle =
                        SplitLabelOracle::new(model, config.budget.space, config.query_budget);
                    decision_attack(&mut oracle, config, &xi, labels[i], ids[i])?
                };
                deltas
                    .index_axis_mut(Axis(0), i)
                    .assign(&result.delta.index_axis(Axis(0), 0));
                success.push(result.success);
                queries.push(result.queries);
            }
            Ok(BatchAttackOutcome {
                deltas,
                success,
                queries,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn norm_pairing_is_enforced() {
        let linf = Budget::new(Norm::Linf, 0.1, Space::Input, 784).unwrap();
        let l2 = Budget::new(Norm::L2, 0.1, Space::Input, 784).unwrap();
        assert!(AttackConfig::new(Algorithm::Fgsm, linf).is_ok());
        assert!(AttackConfig::new(Algorithm::Fgsm, l2).is_err());
        assert!(AttackConfig::new(Algorithm::Pgd, linf).is_ok());
        assert!(AttackConfig::new(Algorithm::Pgd, l2).is_ok());
        assert!(AttackConfig::new(Algorithm::Signopt, l2).is_ok());
        assert!(AttackConfig::new(Algorithm::Signopt, linf).is_err());
        assert!(AttackConfig::new(Algorithm::Nes, l2).is_err());
        assert!(AttackConfig::new(Algorithm::Triangle, linf).is_err());
    }

    #[test]
    fn names_round_trip() {
        for algo in Algorithm::ALL {
            let parsed: Algorithm = algo.to_string().parse().unwrap();
            assert_eq!(parsed, algo);
        }
        assert!("carlini".parse::<Algorithm>().is_err());
    }

    #[test]
    fn default_step_size_follows_sigma() {
        let budget = Budget::new(Norm::Linf, 0.1, Space::Input, 784).unwrap();
        let config = AttackConfig::new(Algorithm::Pgd, budget).unwrap();
        assert!((config.effective_step_size() - 2.5 * 0.1 / 40.0).abs() < 1e-7);
        let mut with_override = config.clone();
        with_override.step_size = Some(0.3);
        assert_eq!(with_override.effective_step_size(), 0.3);
    }

    #[test]
    fn dispatch_runs_every_access_level_against_a_split_model() {
        use crate::splitnet::{mnist_cnn, split_model, ArchId};

        let graph = mnist_cnn(23);
        let mut model = split_model(ArchId::MnistCnn, graph, 2, 23).unwrap();
        let data = crate::data::digits::generate(41, 0, 3);
        let ids: Vec<u64> = (0..3).collect();

        for (algorithm, norm) in [
            (Algorithm::Fgsm, Norm::Linf),
            (Algorithm::Square, Norm::Linf),
            (Algorithm::Eatk, Norm::L2),
        ] {
            let budget = Budget::new(norm, 0.05, Space::Input, 28 * 28).unwrap();
            let mut cfg = AttackConfig::new(algorithm, budget).unwrap();
            cfg.query_budget = 40;
            cfg.samples_per_step = Some(4);
            let out =
                attack_split_model(&mut model, &cfg, &data.images, &data.labels, &ids).unwrap();
            assert_eq!(out.deltas.dim(), data.images.dim());
            assert_eq!(out.success.len(), 3);
            for i in 0..3 {
                let d = out
                    .deltas
                    .index_axis(Axis(0), i)
                    .to_owned()
                    .insert_axis(Axis(0));
                assert!(lp_norm(&d, norm) <= budget.sigma + 1e-5);
                if algorithm.access_level() != AccessLevel::Gradient {
                    assert!(out.queries[i] <= 40, "{algorithm} overspent queries");
                }
            }
        }
    }
}
