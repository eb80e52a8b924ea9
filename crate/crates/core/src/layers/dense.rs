use crate::error::{Error, Result};
use crate::tensor::{gemm, Scalar, Shape4, Tensor4};

/// Fully connected layer `y = x·W + b` on flattened features.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseParams<T> {
    /// (d, m, 1, 1)
    pub weight: Tensor4<T>,
    pub bias: Vec<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseGrads<T> {
    pub grad_x: Tensor4<T>,
    pub grad_weight: Tensor4<T>,
    pub grad_bias: Vec<T>,
}

impl<T: Scalar> DenseParams<T> {
    pub fn new(weight: Tensor4<T>, bias: Vec<T>) -> Result<Self> {
        let s = weight.shape();
        if s.h != 1 || s.w != 1 || bias.len() != s.c {
            return Err(Error::Shape(format!(
                "dense weight must be (d, m, 1, 1) with bias of length m, got {s} and {}",
                bias.len()
            )));
        }
        Ok(Self { weight, bias })
    }

    pub fn in_features(&self) -> usize {
        self.weight.shape().n
    }

    pub fn out_features(&self) -> usize {
        self.weight.shape().c
    }

    pub fn param_count(&self) -> usize {
        self.in_features() * self.out_features() + self.out_features()
    }

    fn check_input(&self, x: Shape4) -> Result<()> {
        if x.sample_len() != self.in_features() {
            return Err(Error::Shape(format!(
                "dense expects {} features per sample, input {x} has {}",
                self.in_features(),
                x.sample_len()
            )));
        }
        Ok(())
    }
}

/// Each sample is read as a flat feature vector; output is (n, m, 1, 1).
pub fn dense_forward<T: Scalar>(x: &Tensor4<T>, p: &DenseParams<T>) -> Result<Tensor4<T>> {
    p.check_input(x.shape())?;
    let (n, d, m) = (x.shape().n, p.in_features(), p.out_features());
    let mut out = Vec::with_capacity(n * m);
    for _ in 0..n {
        out.extend_from_slice(&p.bias);
    }
    gemm(n, d, m, T::one(), x.data(), (d as isize, 1), p.weight.data(), (m as isize, 1), T::one(), &mut out, (m as isize, 1));
    Tensor4::from_vec(Shape4::new(n, m, 1, 1)?, out)
}

pub fn dense_backward<T: Scalar>(x: &Tensor4<T>, p: &DenseParams<T>, grad_out: &Tensor4<T>) -> Result<DenseGrads<T>> {
    p.check_input(x.shape())?;
    let (n, d, m) = (x.shape().n, p.in_features(), p.out_features());
    if grad_out.shape() != Shape4::new(n, m, 1, 1)? {
        return Err(Error::Shape(format!(
            "grad_out {} expected ({n}, {m}, 1, 1)",
            grad_out.shape()
        )));
    }
    let gy = grad_out.data();
    let mut grad_weight = Tensor4::zeros(p.weight.shape())?;
    // dW = xᵀ·dy
    gemm(d, n, m, T::one(), x.data(), (1, d as isize), gy, (m as isize, 1), T::zero(), grad_weight.data_mut(), (m as isize, 1));
    let mut grad_x = Tensor4::zeros(x.shape())?;
    // dx = dy·Wᵀ
    gemm(n, m, d, T::one(), gy, (m as isize, 1), p.weight.data(), (1, m as isize), T::zero(), grad_x.data_mut(), (d as isize, 1));
    let mut grad_bias = vec![T::zero(); m];
    for row in gy.chunks(m) {
        for (b, &g) in grad_bias.iter_mut().zip(row) {
            *b += g;
        }
    }
    Ok(DenseGrads {
        grad_x,
        grad_weight,
        grad_bias,
    })
}
