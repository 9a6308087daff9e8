//! Classification losses and metrics over (N, K) logits.

use ndarray::Array2;

/// Row-wise softmax, numerically stabilized.
pub fn softmax(logits: &Array2<f32>) -> Array2<f32> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Mean cross-entropy and its gradient with respect to the logits.
pub fn cross_entropy(logits: &Array2<f32>, labels: &[usize]) -> (f32, Array2<f32>) {
    let n = logits.nrows();
    assert_eq!(n, labels.len(), "one label per row");
    let probs = softmax(logits);
    let mut loss = 0.0;
    let mut grad = probs.clone();
    let scale = 1.0 / n as f32;
    for (i, &label) in labels.iter().enumerate() {
        loss -= probs[[i, label]].max(1e-12).ln();
        grad[[i, label]] -= 1.0;
    }
    grad.mapv_inplace(|v| v * scale);
    (loss * scale, grad)
}

/// Per-row cross-entropy losses and the gradient of their sum, so each
/// row's gradient is independent of how many rows share the batch.
pub fn cross_entropy_per_sample(logits: &Array2<f32>, labels: &[usize]) -> (Vec<f32>, Array2<f32>) {
    let n = logits.nrows();
    assert_eq!(n, labels.len(), "one label per row");
    let probs = softmax(logits);
    let mut grad = probs.clone();
    let mut losses = Vec::with_capacity(n);
    for (i, &label) in labels.iter().enumerate() {
        losses.push(-probs[[i, label]].max(1e-12).ln());
        grad[[i, label]] -= 1.0;
    }
    (losses, grad)
}

/// Predicted class per row: argmax, ties broken toward the lowest index.
pub fn argmax_rows(logits: &Array2<f32>) -> Vec<usize> {
    logits
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            let mut best_v = f32::NEG_INFINITY;
            for (i, &v) in row.iter().enumerate() {
                if v > best_v {
                    best_v = v;
                    best = i;
                }
            }
            best
        })
        .collect()
}

pub fn accuracy(logits: &Array2<f32>, labels: &[usize]) -> f64 {
    let preds = argmax_rows(logits);
    let correct = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    correct as f64 / labels.len().max(1) as f64
}
