//! Adversary-facing views of the attacked pipeline.
//!
//! White-box evaluators expose loss gradients through the differentiable
//! path (codecs excluded from the backward pass). Black-box oracles expose
//! either score vectors or hard labels from the real pipeline, codec
//! included, with every evaluation counted against a query budget.

use ndarray::{Array1, Array2, Array4, Axis};

use super::budget::Space;
use crate::error::{Error, Result};
use crate::nn::{argmax_rows, cross_entropy_per_sample};
use crate::splitnet::SplitModel;

/// White-box access: per-sample cross-entropy losses, the logits, and the
/// gradient of the summed loss with respect to the attacked tensor.
pub trait GradientEvaluator {
    fn loss_logits_grad(
        &mut self,
        t: &Array4<f32>,
        labels: &[usize],
    ) -> Result<(Vec<f32>, Array2<f32>, Array4<f32>)>;

    /// Prediction through the real pipeline (codec included when present).
    fn predict(&mut self, t: &Array4<f32>) -> Result<Vec<usize>>;
}

/// Score-vector access. `scores_one` counts exactly one query.
pub trait ScoreEvaluator {
    fn scores_one(&mut self, t: &Array4<f32>) -> Result<Array1<f32>>;

    /// One logical query per row; implementations may fuse the forward.
    fn scores_batch(&mut self, t: &Array4<f32>) -> Result<Array2<f32>> {
        let n = t.dim().0;
        let mut out: Option<Array2<f32>> = None;
        for i in 0..n {
            let row = self
                .scores_one(&t.index_axis(Axis(0), i).to_owned().insert_axis(Axis(0)))?;
            let k = row.len();
            let store = out.get_or_insert_with(|| Array2::zeros((n, k)));
            store.row_mut(i).assign(&row);
        }
        out.ok_or_else(|| Error::validation("empty batch".to_string()))
    }

    fn queries_used(&self) -> u64;
    fn query_budget(&self) -> u64;
    fn queries_left(&self) -> u64 {
        self.query_budget().saturating_sub(self.queries_used())
    }
}

/// Hard-label access. `label_one` counts exactly one query.
pub trait LabelEvaluator {
    fn label_one(&mut self, t: &Array4<f32>) -> Result<usize>;

    fn labels_batch(&mut self, t: &Array4<f32>) -> Result<Vec<usize>> {
        let n = t.dim().0;
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            out.push(
                self.label_one(&t.index_axis(Axis(0), i).to_owned().insert_axis(Axis(0)))?,
            );
        }
        Ok(out)
    }

    fn queries_used(&self) -> u64;
    fn query_budget(&self) -> u64;
    fn queries_left(&self) -> u64 {
        self.query_budget().saturating_sub(self.queries_used())
    }
}

#[derive(Debug, Clone)]
pub struct QueryCounter {
    pub used: u64,
    pub budget: u64,
}

impl QueryCounter {
    pub fn new(budget: u64) -> Self {
        QueryCounter { used: 0, budget }
    }

    pub fn charge(&mut self, n: u64) -> Result<()> {
        if self.used + n > self.budget {
            return Err(Error::capability(format!(
                "query budget exhausted: {} used of {}",
                self.used, self.budget
            )));
        }
        self.used += n;
        Ok(())
    }
}

/// White-box view over a split model.
pub struct SplitGradientOracle<'a> {
    pub model: &'a mut SplitModel,
    pub space: Space,
}

impl GradientEvaluator for SplitGradientOracle<'_> {
    fn loss_logits_grad(
        &mut self,
        t: &Array4<f32>,
        labels: &[usize],
    ) -> Result<(Vec<f32>, Array2<f32>, Array4<f32>)> {
        let logits = match self.space {
            Space::Input => self.model.logits_diff_input(t)?,
            Space::Latent => self.model.logits_diff_latent(t)?,
        };
        let (losses, dlogits) = cross_entropy_per_sample(&logits, labels);
        let grad = match self.space {
            Space::Input => self.model.grad_wrt_input(&dlogits),
            Space::Latent => self.model.grad_wrt_latent(&dlogits),
        };
        Ok((losses, logits, grad))
    }

    fn predict(&mut self, t: &Array4<f32>) -> Result<Vec<usize>> {
        match self.space {
            Space::Input => self.model.predict(t),
            Space::Latent => Ok(argmax_rows(&self.model.logits_from_latent(t)?)),
        }
    }
}

/// Score-vector view over a split model, query-counted.
pub struct SplitScoreOracle<'a> {
    pub model: &'a mut SplitModel,
    pub space: Space,
    pub counter: QueryCounter,
}

impl<'a> SplitScoreOracle<'a> {
    pub fn new(model: &'a mut SplitModel, space: Space, query_budget: u64) -> Self {
        SplitScoreOracle {
            model,
            space,
            counter: QueryCounter::new(query_budget),
        }
    }

    fn forward(&mut self, t: &Array4<f32>) -> Result<Array2<f32>> {
        match self.space {
            Space::Input => self.model.forward_split(t),
            Space::Latent => self.model.logits_from_latent(t),
        }
    }
}

impl ScoreEvaluator for SplitScoreOracle<'_> {
    fn scores_one(&mut self, t: &Array4<f32>) -> Result<Array1<f32>> {
        self.counter.charge(1)?;
        Ok(self.forward(t)?.index_axis(Axis(0), 0).to_owned())
    }

    fn scores_batch(&mut self, t: &Array4<f32>) -> Result<Array2<f32>> {
        self.counter.charge(t.dim().0 as u64)?;
        self.forward(t)
    }

    fn queries_used(&self) -> u64 {
        self.counter.used
    }

    fn query_budget(&self) -> u64 {
        self.counter.budget
    }
}

/// Hard-label view over a split model, query-counted.
pub struct SplitLabelOracle<'a> {
    pub model: &'a mut SplitModel,
    pub space: Space,
    pub counter: QueryCounter,
}

impl<'a> SplitLabelOracle<'a> {
    pub fn new(model: &'a mut SplitModel, space: Space, query_budget: u64) -> Self {
        SplitLabelOracle {
            model,
            space,
            counter: QueryCounter::new(query_budget),
        }
    }
}

impl LabelEvaluator for SplitLabelOracle<'_> {
    fn label_one(&mut self, t: &Array4<f32>) -> Result<usize> {
        self.counter.charge(1)?;
        let logits = match self.space {
            Space::Input => self.model.forward_split(t)?,
            Space::Latent => self.model.logits_from_latent(t)?,
        };
        Ok(argmax_rows(&logits)[0])
    }

    fn labels_batch(&mut self, t: &Array4<f32>) -> Result<Vec<usize>> {
        self.counter.charge(t.dim().0 as u64)?;
        let logits = match self.space {
            Space::Input => self.model.forward_split(t)?,
            Space::Latent => self.model.logits_from_latent(t)?,
        };
        Ok(argmax_rows(&logits))
    }

    fn queries_used(&self) -> u64 {
        self.counter.used
    }

    fn query_budget(&self) -> u64 {
        self.counter.budget
    }
}

/// Linear classifier on flattened tensors: logits = W x + b. Closed-form
/// gradients make it an exact reference for attack tests.
#[derive(Debug, Clone)]
pub struct LinearOracle {
    pub weight: Array2<f32>,
    pub bias: Array1<f32>,
    pub counter: QueryCounter,
}

impl LinearOracle {
    pub fn new(weight: Array2<f32>, bias: Array1<f32>, query_budget: u64) -> Self {
        assert_eq!(weight.dim().0, bias.len());
        LinearOracle {
            weight,
            bias,
            counter: QueryCounter::new(query_budget),
        }
    }

    pub fn queries_used(&self) -> u64 {
        self.counter.used
    }

    pub fn queries_left(&self) -> u64 {
        self.counter.budget.saturating_sub(self.counter.used)
    }

    pub fn logits(&self, t: &Array4<f32>) -> Array2<f32> {
        let (n, c, h, w) = t.dim();
        let flat = t
            .clone()
            .into_shape_with_order((n, c * h * w))
            .expect("flatten");
        let mut out = flat.dot(&self.weight.t());
        for mut row in out.rows_mut() {
            row += &self.bias;
        }
        out
    }
}

impl GradientEvaluator for LinearOracle {
    fn loss_logits_grad(
        &mut self,
        t: &Array4<f32>,
        labels: &[usize],
    ) -> Result<(Vec<f32>, Array2<f32>, Array4<f32>)> {
        let logits = self.logits(t);
        let (losses, dlogits) = cross_entropy_per_sample(&logits, labels);
        let flat_grad = dlogits.dot(&self.weight);
        let grad = flat_grad
            .into_shape_with_order(t.dim())
            .expect("gradient reshapes to input");
        Ok((losses, logits, grad))
    }

    fn predict(&mut self, t: &Array4<f32>) -> Result<Vec<usize>> {
        Ok(argmax_rows(&self.logits(t)))
    }
}

impl ScoreEvaluator for LinearOracle {
    fn scores_one(&mut self, t: &Array4<f32>) -> Result<Array1<f32>> {
        self.counter.charge(1)?;
        Ok(self.logits(t).index_axis(Axis(0), 0).to_owned())
    }

    fn scores_batch(&mut self, t: &Array4<f32>) -> Result<Array2<f32>> {
        self.counter.charge(t.dim().0 as u64)?;
        Ok(self.logits(t))
    }

    fn queries_used(&self) -> u64 {
        self.counter.used
    }

    fn query_budget(&self) -> u64 {
        self.counter.budget
    }
}

impl LabelEvaluator for LinearOracle {
    fn label_one(&mut self, t: &Array4<f32>) -> Result<usize> {
        self.counter.charge(1)?;
        Ok(argmax_rows(&self.logits(t))[0])
    }

    fn labels_batch(&mut self, t: &Array4<f32>) -> Result<Vec<usize>> {
        self.counter.charge(t.dim().0 as u64)?;
        Ok(argmax_rows(&self.logits(t)))
    }

    fn queries_used(&self) -> u64 {
        self.counter.used
    }

    fn query_budget(&self) -> u64 {
        self.counter.budget
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn toy() -> LinearOracle {
        LinearOracle::new(array![[1.0f32, 0.0], [0.0, 1.0]], array![0.0f32, 0.0], 5)
    }

    #[test]
    fn each_single_call_costs_exactly_one_query() {
        let mut oracle = toy();
        let x = Array4::from_shape_vec((1, 1, 1, 2), vec![1.0f32, 0.0]).unwrap();
        assert_eq!(oracle.queries_used(), 0);
        oracle.scores_one(&x).unwrap();
        assert_eq!(oracle.queries_used(), 1);
        LabelEvaluator::label_one(&mut oracle, &x).unwrap();
        assert_eq!(oracle.queries_used(), 2);
        assert_eq!(oracle.queries_left(), 3);
    }

    #[test]
    fn exhausted_budgets_error() {
        let mut oracle = toy();
        let x = Array4::from_shape_vec((1, 1, 1, 2), vec![1.0f32, 0.0]).unwrap();
        for _ in 0..5 {
            oracle.scores_one(&x).unwrap();
        }
        assert!(matches!(
            oracle.scores_one(&x),
            Err(Error::Capability(_))
        ));
        assert_eq!(oracle.queries_used(), 5);
    }

    #[test]
    fn linear_gradients_match_closed_form() {
        let mut oracle = toy();
        let x = Array4::from_shape_vec((1, 1, 1, 2), vec![2.0f32, -1.0]).unwrap();
        let (losses, logits, grad) = oracle.loss_logits_grad(&x, &[0]).unwrap();
        let p0 = (logits[[0, 0]].exp()) / (logits[[0, 0]].exp() + logits[[0, 1]].exp());
        assert!((losses[0] + p0.ln()).abs() < 1e-6);
        let g = grad.as_slice().unwrap();
        assert!((g[0] - (p0 - 1.0)).abs() < 1e-6);
        assert!((g[1] - (1.0 - p0)).abs() < 1e-6);
    }

    #[test]
    fn batch_default_matches_per_row_calls() {
        let mut a = toy();
        let mut b = toy();
        let xs = Array4::from_shape_vec((2, 1, 1, 2), vec![1.0f32, 0.5, -0.5, 2.0]).unwrap();
        let batch = a.scores_batch(&xs).unwrap();
        let r0 = b
            .scores_one(&xs.index_axis(Axis(0), 0).to_owned().insert_axis(Axis(0)))
            .unwrap();
        let r1 = b
            .scores_one(&xs.index_axis(Axis(0), 1).to_owned().insert_axis(Axis(0)))
            .unwrap();
        assert_eq!(batch.row(0).to_owned(), r0);
        assert_eq!(batch.row(1).to_owned(), r1);
        assert_eq!(a.queries_used(), 2);
        assert_eq!(b.queries_used(), 2);
    }
}
