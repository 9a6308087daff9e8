//! Experiment runner and reporting: eval-set selection, attack success
//! rates, the standard experiment templates at desk scale, and CSV/SVG
//! emission.
//!
//! Robustness numbers are only comparable when every evaluated sample
//! starts out correctly classified, so attacks are always mounted on an
//! [`EvalSet`] whose clean accuracy is exactly 100% by construction. On
//! such a set the attack success rate and post-attack accuracy are exact
//! complements.

mod experiments;
mod plot;
mod report;

pub use experiments::{run_experiment, ExperimentConfig, Template};
pub use plot::{bar_chart, line_chart, Series};
pub use report::{emit_plots, export_results, ExportFormat, ReportBundle};

use ndarray::{Array4, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::attacks::{Algorithm, Norm, Space};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng::rng_from;
use crate::splitnet::SplitModel;

/// A fixed panel of evaluation samples, all correctly classified by the
/// clean pipeline that selected them.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalSet {
    pub dataset: String,
    pub sample_ids: Vec<usize>,
    pub labels: Vec<usize>,
    pub seed: u64,
}

impl EvalSet {
    pub fn len(&self) -> usize {
        self.sample_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sample_ids.is_empty()
    }

    /// Materialize the panel's images and labels from its source dataset.
    pub fn gather(&self, data: &Dataset) -> Result<(Array4<f32>, Vec<usize>)> {
        for &id in &self.sample_ids {
            if id >= data.len() {
                return Err(Error::validation(format!(
                    "sample id {id} outside the {}-sample dataset",
                    data.len()
                )));
            }
        }
        let images = data.images.select(Axis(0), &self.sample_ids);
        Ok((images, self.labels.clone()))
    }
}

/// Pick `n` correctly classified samples under a seeded shuffle. Errors
/// when the pipeline cannot supply enough, reporting how many it can.
pub fn select_eval_set(
    model: &mut SplitModel,
    data: &Dataset,
    dataset_name: &str,
    n: usize,
    seed: u64,
) -> Result<EvalSet> {
    if n == 0 {
        return Err(Error::validation("an eval set needs at least one sample".to_string()));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut rng_from(seed ^ 0x6576616c));

    let mut preds = vec![usize::MAX; data.len()];
    let mut index = 0;
    while index < data.len() {
        let (images, labels) = data.batch(index, 256);
        let batch_preds = model.predict(&images)?;
        preds[index..index + labels.len()].copy_from_slice(&batch_preds);
        index += labels.len();
    }

    let mut sample_ids = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    let mut correct_total = 0usize;
    for &id in &order {
        if preds[id] == data.labels[id] {
            correct_total += 1;
            if sample_ids.len() < n {
                sample_ids.push(id);
                labels.push(data.labels[id]);
            }
        }
    }
    if sample_ids.len() < n {
        return Err(Error::validation(format!(
            "requested {n} correctly classified samples but only {correct_total} exist"
        )));
    }
    Ok(EvalSet {
        dataset: dataset_name.to_string(),
        sample_ids,
        labels,
        seed,
    })
}

/// Fraction of attacked samples whose prediction flipped.
pub fn compute_asr(success: &[bool]) -> Result<f64> {
    if success.is_empty() {
        return Err(Error::validation("no attack results to aggregate".to_string()));
    }
    Ok(success.iter().filter(|s| **s).count() as f64 / success.len() as f64)
}

/// Attack success rate as a function of the perturbation budget, for one
/// model, attack and perturbation space.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AsrCurve {
    pub model: String,
    pub algorithm: Algorithm,
    pub space: Space,
    pub norm: Norm,
    pub eps: Vec<f64>,
    pub asr: Vec<f64>,
    pub n: Vec<usize>,
}

impl AsrCurve {
    pub fn validate(&self) -> Result<()> {
        if self.eps.len() != self.asr.len() || self.eps.len() != self.n.len() {
            return Err(Error::validation(format!(
                "misaligned curve: {} grid points, {} rates, {} counts",
                self.eps.len(),
                self.asr.len(),
                self.n.len()
            )));
        }
        if self.eps.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::validation("budget grid must be strictly increasing".to_string()));
        }
        if self.asr.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(Error::validation("success rates live in [0, 1]".to_string()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::digits;
    use crate::splitnet::model::mnist_cnn;
    use crate::splitnet::{split_model, ArchId};

    fn untrained_model(seed: u64) -> SplitModel {
        split_model(ArchId::MnistCnn, mnist_cnn(seed), 2, seed).unwrap()
    }

    #[test]
    fn asr_counts_flips() {
        assert_eq!(compute_asr(&[true, true, true]).unwrap(), 1.0);
        assert_eq!(compute_asr(&[false, false]).unwrap(), 0.0);
        assert!((compute_asr(&[true, false, true, false, false, false, false, true, false, false])
            .unwrap()
            - 0.3)
            .abs()
            < 1e-12);
        assert!(compute_asr(&[]).is_err());
    }

    #[test]
    fn selection_needs_enough_correct_samples() {
        let mut model = untrained_model(1);
        let data = digits::generate(1, 0, 64);
        let err = select_eval_set(&mut model, &data, "t", 64, 0).unwrap_err();
        assert!(err.to_string().contains("only"), "{err}");
    }

    #[test]
    fn selected_sets_are_pure_and_seeded() {
        let mut model = untrained_model(2);
        let data = digits::generate(2, 0, 256);

        let mut preds = Vec::new();
        let mut index = 0;
        while index < data.len() {
            let (images, labels) = data.batch(index, 128);
            preds.extend(model.predict(&images).unwrap());
            index += labels.len();
        }
        let correct = preds
            .iter()
            .zip(&data.labels)
            .filter(|(p, l)| p == l)
            .count();
        assert!(correct >= 8, "untrained model too weak to test selection");

        let n = correct.min(8);
        let set = select_eval_set(&mut model, &data, "t", n, 7).unwrap();
        assert_eq!(set.len(), n);

        let (images, labels) = set.gather(&data).unwrap();
        let clean = model.predict(&images).unwrap();
        assert_eq!(clean, labels, "eval set must be 100% correct");

        let again = select_eval_set(&mut model, &data, "t", n, 7).unwrap();
        assert_eq!(again.sample_ids, set.sample_ids);
        let other = select_eval_set(&mut model, &data, "t", n, 8).unwrap();
        assert_ne!(other.sample_ids, set.sample_ids);
    }

    #[test]
    fn curves_are_checked() {
        let mut curve = AsrCurve {
            model: "m".to_string(),
            algorithm: Algorithm::Pgd,
            space: Space::Latent,
            norm: Norm::Linf,
            eps: vec![0.01, 0.02, 0.03],
            asr: vec![0.1, 0.5, 0.9],
            n: vec![10, 10, 10],
        };
        curve.validate().unwrap();
        curve.eps[2] = 0.02;
        assert!(curve.validate().is_err());
        curve.eps[2] = 0.03;
        curve.asr[0] = 1.5;
        assert!(curve.validate().is_err());
    }
}
