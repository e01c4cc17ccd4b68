//! Losses returning `(value, ∂value/∂prediction)`, averaged over the batch.

use crate::error::{Error, Result};
use crate::layers::activation::sigmoid;
use crate::linalg::Tensor;

fn rows(t: &Tensor) -> Result<(usize, usize)> {
    match t.shape() {
        [n, k] => Ok((*n, *k)),
        s => Err(Error::shape(format!(
            "expected [N, K] predictions, got {s:?}"
        ))),
    }
}

/// Mean cross-entropy of softmax(logits) against class labels.
pub fn softmax_xent(logits: &Tensor, labels: &[u8]) -> Result<(f64, Tensor)> {
    let (n, k) = rows(logits)?;
    if labels.len() != n {
        return Err(Error::shape(format!(
            "{n} logits rows, {} labels",
            labels.len()
        )));
    }
    let mut grad = Tensor::zeros(&[n, k]);
    let mut total = 0.0;
    for (i, &label) in labels.iter().enumerate() {
        let label = label as usize;
        if label >= k {
            return Err(Error::shape(format!("label {label} with {k} classes")));
        }
        let z = &logits.data()[i * k..(i + 1) * k];
        let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = z.iter().map(|v| (v - m).exp()).sum();
        let log_sum = m + sum.ln();
        total += log_sum - z[label];
        let g = &mut grad.data_mut()[i * k..(i + 1) * k];
        for (j, gj) in g.iter_mut().enumerate() {
            *gj = (z[j] - log_sum).exp() / n as f64;
        }
        g[label] -= 1.0 / n as f64;
    }
    Ok((total / n as f64, grad))
}

/// `1/(2N) Σ ‖pred - target‖²`.
pub fn l2_loss(pred: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    if pred.shape() != target.shape() {
        return Err(Error::shape(format!(
            "prediction {:?} vs target {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let n = *pred.shape().first().unwrap_or(&1) as f64;
    let mut grad = pred.clone();
    let mut total = 0.0;
    for (g, t) in grad.data_mut().iter_mut().zip(target.data()) {
        let d = *g - t;
        total += d * d;
        *g = d / n;
    }
    Ok((total / (2.0 * n), grad))
}

/// Per-output binary cross-entropy with logits, summed over outputs and
/// averaged over the batch. Targets in `[0, 1]`.
pub fn logistic_loss(logits: &Tensor, targets: &Tensor) -> Result<(f64, Tensor)> {
    if logits.shape() != targets.shape() {
        return Err(Error::shape(format!(
            "logits {:?} vs targets {:?}",
            logits.shape(),
            targets.shape()
        )));
    }
    let (n, _) = rows(logits)?;
    let mut grad = logits.clone();
    let mut total = 0.0;
    for (g, &t) in grad.data_mut().iter_mut().zip(targets.data()) {
        let z = *g;
        // log(1 + e^z) - t z, computed without overflow
        total += z.max(0.0) - t * z + (-z.abs()).exp().ln_1p();
        *g = (sigmoid(z) - t) / n as f64;
    }
    Ok((total / n as f64, grad))
}

/// Fraction of rows whose arg-max matches the label.
pub fn accuracy(logits: &Tensor, labels: &[u8]) -> Result<f64> {
    let (n, k) = rows(logits)?;
    if n == 0 {
        return Ok(0.0);
    }
    let hits = logits
        .data()
        .chunks_exact(k)
        .zip(labels)
        .filter(|(z, &l)| {
            let best = z
                .iter()
                .enumerate()
                .fold(0, |b, (j, v)| if *v > z[b] { j } else { b });
            best == l as usize
        })
        .count();
    Ok(hits as f64 / n as f64)
}

/// One-hot `[N, K]` targets.
pub fn one_hot(labels: &[u8], classes: usize) -> Tensor {
    let mut t = Tensor::zeros(&[labels.len(), classes]);
    for (i, &l) in labels.iter().enumerate() {
        t.data_mut()[i * classes + l as usize] = 1.0;
    }
    t
}
