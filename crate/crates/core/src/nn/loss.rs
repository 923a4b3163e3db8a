use ndarray::{Array1, Array2, ArrayView1};

use crate::error::{Error, Result};

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(sigmoid(x))`, finite for every finite `x`.
pub fn log_sigmoid(x: f64) -> f64 {
    -softplus(-x)
}

/// Cross-entropy of a softmax over `logits` against class `label`. Returns the
/// loss and its gradient with respect to the logits.
pub fn softmax_xent(logits: ArrayView1<f64>, label: usize) -> Result<(f64, Array1<f64>)> {
    if label >= logits.len() {
        return Err(Error::usage(format!(
            "label {label} out of range for {} classes",
            logits.len()
        )));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut probs = logits.mapv(|v| (v - max).exp());
    let z = probs.sum();
    probs /= z;
    let loss = z.ln() - (logits[label] - max);
    probs[label] -= 1.0;
    Ok((loss, probs))
}

#[derive(Debug, Clone)]
pub struct FrameLoss {
    /// Summed over frames.
    pub loss: f64,
    /// Gradient of the summed loss with respect to the logits.
    pub grad: Array2<f64>,
    /// Frames whose arg-max matches the label.
    pub correct: usize,
}

/// Softmax cross-entropy applied row-wise; every row shares `label`.
pub fn softmax_xent_frames(logits: &Array2<f64>, label: usize) -> Result<FrameLoss> {
    let mut grad = Array2::zeros(logits.dim());
    let mut loss = 0.0;
    let mut correct = 0;
    for (t, row) in logits.rows().into_iter().enumerate() {
        let (l, g) = softmax_xent(row, label)?;
        loss += l;
        grad.row_mut(t).assign(&g);
        let argmax = row
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc })
            .0;
        correct += (argmax == label) as usize;
    }
    Ok(FrameLoss { loss, grad, correct })
}
