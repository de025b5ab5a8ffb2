use crate::error::{GadError, Result};
use crate::tensor::Tensor;

/// Cross-entropy of `softmax(logits)` against `label`, with its gradient
/// `softmax(logits) - onehot(label)`. Uses max-subtraction for stability.
pub fn softmax_cross_entropy(logits: &Tensor, label: usize) -> Result<(f32, Tensor)> {
    let m = logits.len();
    if label >= m {
        return Err(GadError::ClassOutOfRange {
            index: label,
            classes: m,
        });
    }
    let z = logits.data();
    let max = z.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let exps: Vec<f64> = z.iter().map(|&v| ((v - max) as f64).exp()).collect();
    let total: f64 = exps.iter().sum();
    let loss = (total.ln() - (z[label] - max) as f64) as f32;
    let grad: Vec<f32> = exps
        .iter()
        .enumerate()
        .map(|(i, e)| (e / total) as f32 - if i == label { 1.0 } else { 0.0 })
        .collect();
    if !loss.is_finite() {
        return Err(GadError::NonFinite("softmax_cross_entropy"));
    }
    Ok((loss, Tensor::new(logits.shape().to_vec(), grad)?))
}

/// Mean squared error `(1/m) Σ (pred - target)²` and its gradient.
pub fn mse_loss(pred: &Tensor, target: &Tensor) -> Result<(f32, Tensor)> {
    pred.same_shape(target, "mse_loss")?;
    let m = pred.len() as f32;
    let mut loss = 0.0f32;
    let grad = pred.zip_map(target, |p, t| {
        let d = p - t;
        loss += d * d;
        2.0 * d / m
    });
    let grad = grad?;
    let loss = loss / m;
    if !loss.is_finite() {
        return Err(GadError::NonFinite("mse_loss"));
    }
    Ok((loss, grad))
}

pub fn softmax(logits: &Tensor) -> Tensor {
    let z = logits.data();
    let max = z.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let exps: Vec<f64> = z.iter().map(|&v| ((v - max) as f64).exp()).collect();
    let total: f64 = exps.iter().sum();
    let probs = exps.iter().map(|e| (e / total) as f32).collect();
    Tensor::new(logits.shape().to_vec(), probs).expect("same length as logits")
}
