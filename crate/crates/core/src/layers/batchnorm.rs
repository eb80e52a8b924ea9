use super::Mode;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor4};

#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormParams<T> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub running_mean: Vec<T>,
    /// Unbiased estimate.
    pub running_var: Vec<T>,
    pub momentum: f64,
    pub eps: f64,
}

impl<T: Scalar> BatchNormParams<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: vec![T::one(); channels],
            beta: vec![T::zero(); channels],
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }
}

/// What the backward pass needs from a forward pass.
#[derive(Clone, Debug)]
pub struct BatchNormCache<T> {
    pub x_hat: Tensor4<T>,
    pub inv_std: Vec<f64>,
    pub mode: Mode,
}

#[derive(Clone, Debug)]
pub struct BatchNormGrads<T> {
    pub grad_x: Tensor4<T>,
    pub grad_gamma: Vec<T>,
    pub grad_beta: Vec<T>,
}

/// `Σ f(x)` in f64 over eight interleaved accumulators, so the order is
/// fixed and the loop vectorizes.
fn lane_sum<T: Scalar>(xs: &[T], f: impl Fn(f64) -> f64) -> f64 {
    let mut acc = [0.0f64; 8];
    let chunks = xs.chunks_exact(8);
    let rest = chunks.remainder();
    for ch in chunks {
        for (a, v) in acc.iter_mut().zip(ch) {
            *a += f(v.as_f64());
        }
    }
    let tail: f64 = rest.iter().map(|v| f(v.as_f64())).sum();
    acc.iter().sum::<f64>() + tail
}

fn lane_dot<T: Scalar>(xs: &[T], ys: &[T]) -> f64 {
    let mut acc = [0.0f64; 8];
    let (a, b) = (xs.chunks_exact(8), ys.chunks_exact(8));
    let tail: f64 = a.remainder().iter().zip(b.remainder()).map(|(x, y)| x.as_f64() * y.as_f64()).sum();
    for (ca, cb) in a.zip(b) {
        for ((s, x), y) in acc.iter_mut().zip(ca).zip(cb) {
            *s += x.as_f64() * y.as_f64();
        }
    }
    acc.iter().sum::<f64>() + tail
}

/// Train mode normalizes by batch statistics (biased variance) and updates
/// the running estimates; eval mode normalizes by the running estimates.
pub fn batchnorm_forward<T: Scalar>(
    x: &Tensor4<T>,
    p: &mut BatchNormParams<T>,
    mode: Mode,
) -> Result<(Tensor4<T>, BatchNormCache<T>)> {
    let s = x.shape();
    if s.c != p.channels() {
        return Err(Error::Shape(format!(
            "input has {} channels, batch norm has {}",
            s.c,
            p.channels()
        )));
    }
    if !(p.eps > 0.0) {
        return Err(Error::Argument(format!("eps must be positive, got {}", p.eps)));
    }
    let plane = s.plane();
    let count = s.n * plane;
    let (mean, inv_std): (Vec<f64>, Vec<f64>) = match mode {
        Mode::Train => {
            if count < 2 {
                return Err(Error::Argument(format!(
                    "train-mode batch norm needs at least 2 values per channel, got {count}"
                )));
            }
            let mut stats = Vec::with_capacity(s.c);
            for c in 0..s.c {
                let planes = || (0..s.n).map(move |i| &x.data()[(i * s.c + c) * plane..][..plane]);
                let mean = planes().map(|xs| lane_sum(xs, |v| v)).sum::<f64>() / count as f64;
                let var = planes().map(|xs| lane_sum(xs, |v| (v - mean) * (v - mean))).sum::<f64>() / count as f64;
                let m = p.momentum;
                let unbiased = var * count as f64 / (count - 1) as f64;
                p.running_mean[c] = T::from_f64_lossy((1.0 - m) * p.running_mean[c].as_f64() + m * mean);
                p.running_var[c] = T::from_f64_lossy((1.0 - m) * p.running_var[c].as_f64() + m * unbiased);
                stats.push((mean, 1.0 / (var + p.eps).sqrt()));
            }
            stats.into_iter().unzip()
        }
        Mode::Eval => p
            .running_mean
            .iter()
            .zip(&p.running_var)
            .map(|(m, v)| (m.as_f64(), 1.0 / (v.as_f64() + p.eps).sqrt()))
            .unzip(),
    };

    let mut x_hat = Tensor4::zeros(s)?;
    let mut out = Tensor4::zeros(s)?;
    for (idx, ((xs, hs), os)) in x
        .data()
        .chunks(plane)
        .zip(x_hat.data_mut().chunks_mut(plane))
        .zip(out.data_mut().chunks_mut(plane))
        .enumerate()
    {
        let c = idx % s.c;
        let (m, is) = (mean[c], inv_std[c]);
        let (g, b) = (p.gamma[c].as_f64(), p.beta[c].as_f64());
        for ((xv, hv), ov) in xs.iter().zip(hs.iter_mut()).zip(os.iter_mut()) {
            let h = (xv.as_f64() - m) * is;
            *hv = T::from_f64_lossy(h);
            *ov = T::from_f64_lossy(g * h + b);
        }
    }
    Ok((out, BatchNormCache { x_hat, inv_std, mode }))
}

/// Full gradient, including the paths through the batch mean and variance
/// in train mode.
pub fn batchnorm_backward<T: Scalar>(
    cache: &BatchNormCache<T>,
    p: &BatchNormParams<T>,
    grad_out: &Tensor4<T>,
) -> Result<BatchNormGrads<T>> {
    let s = cache.x_hat.shape();
    if grad_out.shape() != s {
        return Err(Error::Shape(format!("grad_out {} expected {s}", grad_out.shape())));
    }
    let plane = s.plane();
    let count = (s.n * plane) as f64;
    let mut sum_dy = vec![0.0f64; s.c];
    let mut sum_dy_xhat = vec![0.0f64; s.c];
    for (idx, (gs, hs)) in grad_out.data().chunks(plane).zip(cache.x_hat.data().chunks(plane)).enumerate() {
        let c = idx % s.c;
        sum_dy[c] += lane_sum(gs, |v| v);
        sum_dy_xhat[c] += lane_dot(gs, hs);
    }

    let mut grad_x = Tensor4::zeros(s)?;
    for (idx, ((gs, hs), dx)) in grad_out
        .data()
        .chunks(plane)
        .zip(cache.x_hat.data().chunks(plane))
        .zip(grad_x.data_mut().chunks_mut(plane))
        .enumerate()
    {
        let c = idx % s.c;
        let scale = p.gamma[c].as_f64() * cache.inv_std[c];
        let (mean_dy, mean_dy_xhat) = match cache.mode {
            Mode::Train => (sum_dy[c] / count, sum_dy_xhat[c] / count),
            Mode::Eval => (0.0, 0.0),
        };
        for ((g, h), d) in gs.iter().zip(hs).zip(dx.iter_mut()) {
            *d = T::from_f64_lossy(scale * (g.as_f64() - mean_dy - h.as_f64() * mean_dy_xhat));
        }
    }
    Ok(BatchNormGrads {
        grad_x,
        grad_gamma: sum_dy_xhat.into_iter().map(T::from_f64_lossy).collect(),
        grad_beta: sum_dy.into_iter().map(T::from_f64_lossy).collect(),
    })
}
