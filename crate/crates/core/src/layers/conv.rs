use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{gemm, Scalar, Shape4, Tensor4};

/// Images per backward work unit. Fixed so the weight-gradient reduction
/// order does not depend on the thread count.
const BACKWARD_CHUNK: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct Conv2dParams<T> {
    /// (c_out, c_in, k, k)
    pub weight: Tensor4<T>,
    pub bias: Vec<T>,
    pub stride: usize,
    pub pad: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Conv2dGrads<T> {
    pub grad_x: Tensor4<T>,
    pub grad_weight: Tensor4<T>,
    pub grad_bias: Vec<T>,
}

impl<T: Scalar> Conv2dParams<T> {
    pub fn new(weight: Tensor4<T>, bias: Vec<T>, stride: usize, pad: usize) -> Result<Self> {
        let p = Self {
            weight,
            bias,
            stride,
            pad,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.weight.shape();
        if s.h != s.w {
            return Err(Error::Shape(format!("kernel must be square, got {}x{}", s.h, s.w)));
        }
        if self.stride == 0 {
            return Err(Error::Argument("stride must be >= 1".into()));
        }
        if self.bias.len() != s.n {
            return Err(Error::Shape(format!(
                "bias length {} does not match c_out {}",
                self.bias.len(),
                s.n
            )));
        }
        Ok(())
    }

    pub fn kernel(&self) -> usize {
        self.weight.shape().h
    }

    pub fn c_in(&self) -> usize {
        self.weight.shape().c
    }

    pub fn c_out(&self) -> usize {
        self.weight.shape().n
    }

    pub fn output_shape(&self, x: Shape4) -> Result<Shape4> {
        self.validate()?;
        if x.c != self.c_in() {
            return Err(Error::Shape(format!(
                "input has {} channels, kernel expects {}",
                x.c,
                self.c_in()
            )));
        }
        let k = self.kernel();
        let ho = conv_output_len(x.h, k, self.stride, self.pad)
            .ok_or_else(|| Error::Shape(format!("kernel {k} larger than padded input height {}", x.h + 2 * self.pad)))?;
        let wo = conv_output_len(x.w, k, self.stride, self.pad)
            .ok_or_else(|| Error::Shape(format!("kernel {k} larger than padded input width {}", x.w + 2 * self.pad)))?;
        Shape4::new(x.n, self.c_out(), ho, wo)
    }
}

/// `⌊(len + 2·pad − k)/stride⌋ + 1`, or `None` when the kernel does not fit.
pub fn conv_output_len(len: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = len + 2 * pad;
    (padded >= k && stride > 0).then(|| (padded - k) / stride + 1)
}

struct Geometry {
    c_in: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl Geometry {
    fn rows(&self) -> usize {
        self.c_in * self.k * self.k
    }

    fn cols(&self) -> usize {
        self.ho * self.wo
    }

    /// Input coordinate for output coordinate `o` and kernel offset `kk`.
    #[inline]
    fn src(&self, o: usize, kk: usize, len: usize) -> Option<usize> {
        (o * self.stride + kk).checked_sub(self.pad).filter(|&i| i < len)
    }

    /// Output positions `lo..hi` (out of `out_len`) whose input coordinate
    /// for kernel offset `kk` lands inside `0..len`.
    #[inline]
    fn valid(&self, kk: usize, len: usize, out_len: usize) -> (usize, usize) {
        let lo = self.pad.saturating_sub(kk).div_ceil(self.stride).min(out_len);
        let hi = if len + self.pad > kk { ((len + self.pad - kk - 1) / self.stride + 1).min(out_len) } else { 0 };
        (lo, hi.max(lo))
    }
}

/// Unfold one image (c_in, h, w) into a (c_in·k·k, ho·wo) matrix.
fn im2col<T: Scalar>(img: &[T], g: &Geometry, col: &mut [T]) {
    let p = g.cols();
    for ci in 0..g.c_in {
        let plane = &img[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (ci * g.k + ky) * g.k + kx;
                let dst = &mut col[row * p..(row + 1) * p];
                let (lo, hi) = g.valid(kx, g.w, g.wo);
                for oy in 0..g.ho {
                    let out = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    let Some(iy) = g.src(oy, ky, g.h) else {
                        out.fill(T::zero());
                        continue;
                    };
                    let src_row = &plane[iy * g.w..(iy + 1) * g.w];
                    out[..lo].fill(T::zero());
                    out[hi..].fill(T::zero());
                    // First valid input column; `lo` makes this non-negative.
                    let start = lo * g.stride + kx - g.pad;
                    if g.stride == 1 {
                        out[lo..hi].copy_from_slice(&src_row[start..start + (hi - lo)]);
                    } else {
                        for (o, &v) in out[lo..hi].iter_mut().zip(src_row[start..].iter().step_by(g.stride)) {
                            *o = v;
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add columns back into an image.
fn col2im<T: Scalar>(col: &[T], g: &Geometry, img: &mut [T]) {
    let p = g.cols();
    for ci in 0..g.c_in {
        let plane = &mut img[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (ci * g.k + ky) * g.k + kx;
                let src = &col[row * p..(row + 1) * p];
                let (lo, hi) = g.valid(kx, g.w, g.wo);
                for oy in 0..g.ho {
                    let Some(iy) = g.src(oy, ky, g.h) else { continue };
                    let dst_row = &mut plane[iy * g.w..(iy + 1) * g.w];
                    let from = &src[oy * g.wo + lo..oy * g.wo + hi];
                    let start = lo * g.stride + kx - g.pad;
                    for (d, &v) in dst_row[start..].iter_mut().step_by(g.stride).zip(from) {
                        *d += v;
                    }
                }
            }
        }
    }
}

fn geometry<T: Scalar>(x: Shape4, p: &Conv2dParams<T>) -> Result<(Geometry, Shape4)> {
    let out = p.output_shape(x)?;
    Ok((
        Geometry {
            c_in: x.c,
            h: x.h,
            w: x.w,
            k: p.kernel(),
            stride: p.stride,
            pad: p.pad,
            ho: out.h,
            wo: out.w,
        },
        out,
    ))
}

/// Cross-correlation plus bias, via im2col and one GEMM per image.
pub fn conv2d_forward<T: Scalar>(x: &Tensor4<T>, p: &Conv2dParams<T>) -> Result<Tensor4<T>> {
    let (g, out_shape) = geometry(x.shape(), p)?;
    let (rows, cols, c_out) = (g.rows(), g.cols(), p.c_out());
    let mut out = Tensor4::zeros(out_shape)?;
    let weight = p.weight.data();
    out.data_mut()
        .par_chunks_mut(c_out * cols)
        .zip(x.data().par_chunks(x.shape().sample_len()))
        .for_each_init(
            || vec![T::zero(); rows * cols],
            |col, (o, img)| {
                im2col(img, &g, col);
                gemm(c_out, rows, cols, T::one(), weight, (rows as isize, 1), col, (cols as isize, 1), T::zero(), o, (cols as isize, 1));
                for (plane, &b) in o.chunks_mut(cols).zip(&p.bias) {
                    plane.iter_mut().for_each(|v| *v += b);
                }
            },
        );
    Ok(out)
}

/// Gradients of `sum(grad_out ⊙ conv2d_forward(x, p))`.
pub fn conv2d_backward<T: Scalar>(x: &Tensor4<T>, p: &Conv2dParams<T>, grad_out: &Tensor4<T>) -> Result<Conv2dGrads<T>> {
    let (g, out_shape) = geometry(x.shape(), p)?;
    if grad_out.shape() != out_shape {
        return Err(Error::Shape(format!(
            "grad_out {} does not match forward output {out_shape}",
            grad_out.shape()
        )));
    }
    let (rows, cols, c_out) = (g.rows(), g.cols(), p.c_out());
    let sample_in = x.shape().sample_len();
    let sample_out = c_out * cols;
    let weight = p.weight.data();

    let mut grad_x = Tensor4::zeros(x.shape())?;
    let partials: Vec<Vec<T>> = grad_x
        .data_mut()
        .par_chunks_mut(sample_in * BACKWARD_CHUNK)
        .zip(x.data().par_chunks(sample_in * BACKWARD_CHUNK))
        .zip(grad_out.data().par_chunks(sample_out * BACKWARD_CHUNK))
        .map(|((gx_chunk, x_chunk), gy_chunk)| {
            let mut gw = vec![T::zero(); c_out * rows];
            let mut col = vec![T::zero(); rows * cols];
            let mut dcol = vec![T::zero(); rows * cols];
            for ((gx, img), gy) in gx_chunk
                .chunks_mut(sample_in)
                .zip(x_chunk.chunks(sample_in))
                .zip(gy_chunk.chunks(sample_out))
            {
                im2col(img, &g, &mut col);
                // gw += gy (c_out×P) · colᵀ (P×rows)
                gemm(c_out, cols, rows, T::one(), gy, (cols as isize, 1), &col, (1, cols as isize), T::one(), &mut gw, (rows as isize, 1));
                // dcol = Wᵀ (rows×c_out) · gy (c_out×P)
                gemm(rows, c_out, cols, T::one(), weight, (1, rows as isize), gy, (cols as isize, 1), T::zero(), &mut dcol, (cols as isize, 1));
                col2im(&dcol, &g, gx);
            }
            gw
        })
        .collect();

    let mut grad_weight = Tensor4::zeros(p.weight.shape())?;
    for part in &partials {
        for (a, &b) in grad_weight.data_mut().iter_mut().zip(part) {
            *a += b;
        }
    }

    let mut grad_bias = vec![T::zero(); c_out];
    for sample in grad_out.data().chunks(sample_out) {
        for (gb, plane) in grad_bias.iter_mut().zip(sample.chunks(cols)) {
            *gb += plane.iter().copied().sum::<T>();
        }
    }

    Ok(Conv2dGrads {
        grad_x,
        grad_weight,
        grad_bias,
    })
}

fn require_stride_two<T: Scalar>(p: &Conv2dParams<T>) -> Result<()> {
    if p.stride != 2 {
        return Err(Error::Argument(format!(
            "strided downsampling convolution requires stride 2, got {}",
            p.stride
        )));
    }
    Ok(())
}

/// Stride-2 convolution used as a learned downsampling layer in place of pooling.
pub fn strided_conv_down_forward<T: Scalar>(x: &Tensor4<T>, p: &Conv2dParams<T>) -> Result<Tensor4<T>> {
    require_stride_two(p)?;
    conv2d_forward(x, p)
}

pub fn strided_conv_down_backward<T: Scalar>(
    x: &Tensor4<T>,
    p: &Conv2dParams<T>,
    grad_out: &Tensor4<T>,
) -> Result<Conv2dGrads<T>> {
    require_stride_two(p)?;
    conv2d_backward(x, p, grad_out)
}
