use rayon::prelude::*;

use super::{check_probability, Mode};
use crate::error::{Error, Result};
use crate::rng::CounterRng;
use crate::tensor::{Scalar, Tensor4};

/// Keep mask of an inverted-dropout forward pass and the factor survivors
/// were scaled by (1/(1−p) in train mode, 1 in eval mode).
#[derive(Clone, Debug, PartialEq)]
pub struct DropMask {
    pub keep: Vec<bool>,
    pub scale: f64,
}

impl DropMask {
    pub fn all_kept(len: usize) -> Self {
        Self {
            keep: vec![true; len],
            scale: 1.0,
        }
    }

    /// Element `i` is dropped iff stream draw `i` falls below `p`.
    pub fn sample(len: usize, p: f64, rng: &CounterRng) -> Self {
        if p == 0.0 {
            return Self::all_kept(len);
        }
        // Same test as `unit_at(i) >= p`, on the 53-bit integer.
        let threshold = (p * (1u64 << 53) as f64).ceil() as u64;
        let mut keep = vec![false; len];
        keep.par_chunks_mut(1 << 14).enumerate().for_each(|(ci, chunk)| {
            let base = (ci << 14) as u64;
            for (j, k) in chunk.iter_mut().enumerate() {
                *k = rng.at(base + j as u64) >> 11 >= threshold;
            }
        });
        Self {
            keep,
            scale: 1.0 / (1.0 - p),
        }
    }

    pub fn dropped_fraction(&self) -> f64 {
        self.keep.iter().filter(|&&k| !k).count() as f64 / self.keep.len().max(1) as f64
    }

    /// `x · keep · scale`, elementwise.
    pub fn apply<T: Scalar>(&self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        if self.keep.len() != x.len() {
            return Err(Error::Invariant(format!(
                "mask of length {} applied to {} elements",
                self.keep.len(),
                x.len()
            )));
        }
        let scale = T::from_f64_lossy(self.scale);
        Tensor4::from_vec(
            x.shape(),
            x.data()
                .iter()
                .zip(&self.keep)
                .map(|(&v, &k)| if k { v * scale } else { T::zero() })
                .collect(),
        )
    }
}

/// Inverted dropout: train mode zeroes each element with probability `p` and
/// scales survivors by 1/(1−p); eval mode is the identity.
pub fn dropout_forward<T: Scalar>(x: &Tensor4<T>, p: f64, mode: Mode, rng: &CounterRng) -> Result<(Tensor4<T>, DropMask)> {
    check_probability(p, "dropout")?;
    if mode == Mode::Eval || p == 0.0 {
        return Ok((x.clone(), DropMask::all_kept(x.len())));
    }
    let mask = DropMask::sample(x.len(), p, rng);
    Ok((mask.apply(x)?, mask))
}

pub fn dropout_backward<T: Scalar>(mask: &DropMask, grad_out: &Tensor4<T>) -> Result<Tensor4<T>> {
    mask.apply(grad_out)
}
