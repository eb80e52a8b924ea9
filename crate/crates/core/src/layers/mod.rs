//! Forward and backward passes for every operator the networks use.
//!
//! All functions are pure: parameters come in by reference, gradients come
//! back as values, and any randomness is drawn from an explicit
//! [`CounterRng`](crate::rng::CounterRng) stream.

mod activation;
mod batchnorm;
mod conv;
mod dense;
mod dropout;
mod loss;
mod pool;
mod saf;
mod stats;

pub use activation::{relu_backward, relu_forward};
pub use batchnorm::{batchnorm_backward, batchnorm_forward, BatchNormCache, BatchNormGrads, BatchNormParams};
pub use conv::{
    conv2d_backward, conv2d_forward, conv_output_len, strided_conv_down_backward, strided_conv_down_forward,
    Conv2dGrads, Conv2dParams,
};
pub use dense::{dense_backward, dense_forward, DenseGrads, DenseParams};
pub use dropout::{dropout_backward, dropout_forward, DropMask};
pub use loss::{argmax_rows, softmax_xent};
pub use pool::{
    global_avgpool_backward, global_avgpool_forward, global_maxpool_forward, maxpool_backward, maxpool_forward,
};
pub use saf::{saf_pool_backward, saf_pool_forward, SafPoolConfig, SafPoolOutput};
pub use stats::{activation_stats, ActivationStats};

/// Train/eval switch for layers whose behaviour differs between the two.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Mode {
    #[default]
    Train,
    Eval,
}

pub(crate) fn check_probability(p: f64, what: &str) -> crate::Result<()> {
    if (0.0..1.0).contains(&p) {
        Ok(())
    } else {
        Err(crate::Error::Argument(format!("{what} probability must be in [0, 1), got {p}")))
    }
}
