//! Classification and distillation losses. All reductions are batch means.

use std::ops::Range;

use ndarray::{s, Array2, Axis};

use crate::error::{GfrError, Result};

/// Numerically stable row-wise softmax.
pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut p = logits.clone();
    for mut row in p.axis_iter_mut(Axis(0)) {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    p
}

fn check_labels(labels: &[usize], classes: usize, rows: usize) -> Result<()> {
    if labels.len() != rows {
        return Err(GfrError::input(format!("{} labels for {rows} rows", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(GfrError::input(format!("label {bad} out of range for {classes} classes")));
    }
    Ok(())
}

/// Mean negative log-probability of the true class.
pub fn cross_entropy(probs: &Array2<f64>, labels: &[usize]) -> Result<f64> {
    check_labels(labels, probs.ncols(), probs.nrows())?;
    if labels.is_empty() {
        return Err(GfrError::input("cross-entropy of an empty batch"));
    }
    let total: f64 = labels.iter().enumerate().map(|(i, &y)| -probs[[i, y]].ln()).sum();
    Ok(total / labels.len() as f64)
}

/// Softmax cross-entropy on logits. Returns the mean loss and its gradient
/// with respect to the logits, scaled by `1/n`.
pub fn softmax_cross_entropy(logits: &Array2<f64>, labels: &[usize]) -> Result<(f64, Array2<f64>)> {
    check_labels(labels, logits.ncols(), logits.nrows())?;
    let n = labels.len();
    if n == 0 {
        return Ok((0.0, Array2::zeros(logits.raw_dim())));
    }
    let mut grad = softmax_rows(logits);
    let mut loss = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        loss -= grad[[i, y]].ln();
        grad[[i, y]] -= 1.0;
    }
    grad /= n as f64;
    Ok((loss / n as f64, grad))
}

/// Mean unsquared Euclidean distance between matching rows, and its gradient
/// with respect to `current`. Rows at distance zero get a zero gradient.
pub fn feature_distillation(current: &Array2<f64>, previous: &Array2<f64>) -> Result<(f64, Array2<f64>)> {
    if current.dim() != previous.dim() {
        return Err(GfrError::input(format!(
            "feature shapes differ: {:?} vs {:?}",
            current.dim(),
            previous.dim()
        )));
    }
    let n = current.nrows();
    let mut grad = current - previous;
    if n == 0 {
        return Ok((0.0, grad));
    }
    let mut total = 0.0;
    for mut row in grad.axis_iter_mut(Axis(0)) {
        let norm = row.dot(&row).sqrt();
        total += norm;
        if norm > 0.0 {
            row /= norm * n as f64;
        }
    }
    Ok((total / n as f64, grad))
}

/// `−Σ_k p_k ln q_k`.
pub fn distribution_cross_entropy(target: &[f64], predicted: &[f64]) -> f64 {
    target.iter().zip(predicted).map(|(p, q)| -p * q.ln()).sum()
}

/// Distillation of the previous model's per-task class distributions into
/// the current model, summed over the previous tasks' class ranges and
/// averaged over the batch. Returns the loss and its gradient with respect to
/// the current logits.
pub fn lwf(
    current_logits: &Array2<f64>,
    previous_logits: &Array2<f64>,
    previous_tasks: &[Range<usize>],
    temperature: f64,
) -> Result<(f64, Array2<f64>)> {
    if previous_tasks.is_empty() {
        return Err(GfrError::config("LwF needs at least one previous task"));
    }
    if !(temperature > 0.0) {
        return Err(GfrError::config(format!("LwF temperature must be positive, got {temperature}")));
    }
    let n = current_logits.nrows();
    let mut grad = Array2::zeros(current_logits.raw_dim());
    if n == 0 {
        return Ok((0.0, grad));
    }
    let mut loss = 0.0;
    for r in previous_tasks {
        if r.end > previous_logits.ncols() || r.end > current_logits.ncols() {
            return Err(GfrError::input("previous-task range exceeds logit width"));
        }
        let q = softmax_rows(&(current_logits.slice(s![.., r.clone()]).to_owned() / temperature));
        let p = softmax_rows(&(previous_logits.slice(s![.., r.clone()]).to_owned() / temperature));
        for i in 0..n {
            loss += distribution_cross_entropy(
                p.row(i).as_slice().expect("contiguous"),
                q.row(i).as_slice().expect("contiguous"),
            );
        }
        let g = (&q - &p) / (temperature * n as f64);
        let mut target = grad.slice_mut(s![.., r.clone()]);
        target += &g;
    }
    Ok((loss / n as f64, grad))
}
