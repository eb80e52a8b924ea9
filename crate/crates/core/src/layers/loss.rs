use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor4};

/// Mean softmax cross-entropy over the batch and its gradient
/// `(softmax − onehot)/n`. Logits are (n, k, 1, 1).
pub fn softmax_xent<T: Scalar>(logits: &Tensor4<T>, labels: &[usize]) -> Result<(f64, Tensor4<T>)> {
    let s = logits.shape();
    if s.h != 1 || s.w != 1 {
        return Err(Error::Shape(format!("logits must be (n, k, 1, 1), got {s}")));
    }
    if labels.len() != s.n {
        return Err(Error::Shape(format!("{} labels for a batch of {}", labels.len(), s.n)));
    }
    let k = s.c;
    let inv_n = 1.0 / s.n as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(logits.len());
    for (row, &label) in logits.data().chunks(k).zip(labels) {
        if label >= k {
            return Err(Error::Argument(format!("label {label} outside [0, {k})")));
        }
        let max = row.iter().map(|v| v.as_f64()).fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|v| (v.as_f64() - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        loss -= (row[label].as_f64() - max) - z.ln();
        for (j, e) in exps.iter().enumerate() {
            let onehot = if j == label { 1.0 } else { 0.0 };
            grad.push(T::from_f64_lossy((e / z - onehot) * inv_n));
        }
    }
    Ok((loss * inv_n, Tensor4::from_vec(s, grad)?))
}

/// Index of the largest logit per sample; first wins on ties.
pub fn argmax_rows<T: Scalar>(logits: &Tensor4<T>) -> Vec<usize> {
    logits
        .data()
        .chunks(logits.shape().sample_len())
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}
