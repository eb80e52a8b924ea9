use crate::error::Result;
use crate::tensor::{Scalar, Tensor4};

pub fn relu_forward<T: Scalar>(x: &Tensor4<T>) -> Tensor4<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Passes gradient where `x > 0`; the subgradient at exactly 0 is 0.
pub fn relu_backward<T: Scalar>(x: &Tensor4<T>, grad_out: &Tensor4<T>) -> Result<Tensor4<T>> {
    x.zip_with(grad_out, |v, g| if v > T::zero() { g } else { T::zero() })
}
