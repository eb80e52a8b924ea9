use crate::tensor::{Scalar, Tensor4};

/// Sparsity summary of a post-ReLU activation batch.
#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct ActivationStats {
    /// Fraction of channels that are zero for every sample and position.
    pub dead_fraction: f64,
    /// Fraction of all values below the threshold.
    pub near_zero_fraction: f64,
    pub threshold: f64,
    pub per_channel_mean: Vec<f64>,
}

pub fn activation_stats<T: Scalar>(x: &Tensor4<T>, threshold: f64) -> ActivationStats {
    let s = x.shape();
    let plane = s.plane();
    let mut alive = vec![false; s.c];
    let mut sums = vec![0.0f64; s.c];
    let mut near_zero = 0usize;
    for (idx, p) in x.data().chunks(plane).enumerate() {
        let c = idx % s.c;
        for v in p {
            let v = v.as_f64();
            if v != 0.0 {
                alive[c] = true;
            }
            if v < threshold {
                near_zero += 1;
            }
            sums[c] += v;
        }
    }
    let per_sample = (s.n * plane) as f64;
    ActivationStats {
        dead_fraction: alive.iter().filter(|&&a| !a).count() as f64 / s.c as f64,
        near_zero_fraction: near_zero as f64 / x.len() as f64,
        threshold,
        per_channel_mean: sums.into_iter().map(|v| v / per_sample).collect(),
    }
}
