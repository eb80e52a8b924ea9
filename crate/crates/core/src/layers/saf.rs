//! SAF-pooling: max-pooling followed by dropout on the pooled activations.
//!
//! Max-pooling keeps only the strongest response in each window; dropping
//! pooled units therefore removes high activations specifically, forcing
//! later layers to use weaker, alternative features. Dropping is per pooled
//! unit, independently.

use super::dropout::DropMask;
use super::pool::{maxpool_backward, maxpool_forward};
use super::{check_probability, Mode};
use crate::error::{Error, Result};
use crate::rng::CounterRng;
use crate::tensor::{Scalar, Shape4, Tensor4};

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SafPoolConfig {
    pub window: usize,
    pub stride: usize,
    pub drop_p: f64,
}

impl SafPoolConfig {
    pub fn new(window: usize, stride: usize, drop_p: f64) -> Result<Self> {
        check_probability(drop_p, "SAF-pool drop")?;
        if window == 0 || stride == 0 {
            return Err(Error::Argument("SAF-pool window and stride must be >= 1".into()));
        }
        Ok(Self { window, stride, drop_p })
    }
}

impl Default for SafPoolConfig {
    fn default() -> Self {
        Self {
            window: 2,
            stride: 2,
            drop_p: 0.2,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SafPoolOutput<T> {
    pub output: Tensor4<T>,
    pub mask: DropMask,
    pub argmax: Vec<usize>,
}

pub fn saf_pool_forward<T: Scalar>(x: &Tensor4<T>, cfg: &SafPoolConfig, mode: Mode, rng: &CounterRng) -> Result<SafPoolOutput<T>> {
    check_probability(cfg.drop_p, "SAF-pool drop")?;
    let (pooled, argmax) = maxpool_forward(x, cfg.window, cfg.stride)?;
    let mask = match mode {
        Mode::Train => DropMask::sample(pooled.len(), cfg.drop_p, rng),
        Mode::Eval => DropMask::all_kept(pooled.len()),
    };
    let output = if mask.scale == 1.0 && mask.keep.iter().all(|&k| k) {
        pooled
    } else {
        mask.apply(&pooled)?
    };
    Ok(SafPoolOutput { output, mask, argmax })
}

/// Scale by the forward mask, then route as max-pool backward.
pub fn saf_pool_backward<T: Scalar>(
    mask: &DropMask,
    argmax: &[usize],
    grad_out: &Tensor4<T>,
    input_shape: Shape4,
) -> Result<Tensor4<T>> {
    let masked = mask.apply(grad_out)?;
    maxpool_backward(argmax, &masked, input_shape)
}
