use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape4, Tensor4};

/// Max over each `window × window` patch. Returns the pooled tensor and, for
/// every output element, the flat input offset of its winner. Ties go to the
/// first element in row-major scan order.
pub fn maxpool_forward<T: Scalar>(x: &Tensor4<T>, window: usize, stride: usize) -> Result<(Tensor4<T>, Vec<usize>)> {
    let s = x.shape();
    if window == 0 || stride == 0 {
        return Err(Error::Argument("pool window and stride must be >= 1".into()));
    }
    if window > s.h || window > s.w {
        return Err(Error::Shape(format!(
            "pool window {window} larger than input {}x{}",
            s.h, s.w
        )));
    }
    let ho = (s.h - window) / stride + 1;
    let wo = (s.w - window) / stride + 1;
    let out_shape = Shape4::new(s.n, s.c, ho, wo)?;
    let mut out = Vec::with_capacity(out_shape.len());
    let mut argmax = Vec::with_capacity(out_shape.len());
    let data = x.data();
    for plane in 0..s.n * s.c {
        let base = plane * s.h * s.w;
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = base + oy * stride * s.w + ox * stride;
                for ky in 0..window {
                    let row = base + (oy * stride + ky) * s.w + ox * stride;
                    for idx in row..row + window {
                        if data[idx] > data[best] {
                            best = idx;
                        }
                    }
                }
                out.push(data[best]);
                argmax.push(best);
            }
        }
    }
    Ok((Tensor4::from_vec(out_shape, out)?, argmax))
}

/// Route each output gradient to the input cell that won its window.
pub fn maxpool_backward<T: Scalar>(argmax: &[usize], grad_out: &Tensor4<T>, input_shape: Shape4) -> Result<Tensor4<T>> {
    if argmax.len() != grad_out.len() {
        return Err(Error::Invariant(format!(
            "argmax has {} entries for {} output gradients",
            argmax.len(),
            grad_out.len()
        )));
    }
    let mut grad_x = Tensor4::zeros(input_shape)?;
    let gx = grad_x.data_mut();
    for (&idx, &g) in argmax.iter().zip(grad_out.data()) {
        let cell = gx
            .get_mut(idx)
            .ok_or_else(|| Error::Invariant(format!("argmax offset {idx} outside input {input_shape}")))?;
        *cell += g;
    }
    Ok(grad_x)
}

/// Per-channel spatial mean, output (n, c, 1, 1).
pub fn global_avgpool_forward<T: Scalar>(x: &Tensor4<T>) -> Result<Tensor4<T>> {
    let s = x.shape();
    let inv = T::from_f64_lossy(1.0 / s.plane() as f64);
    let data = x.data().chunks(s.plane()).map(|p| p.iter().copied().sum::<T>() * inv).collect();
    Tensor4::from_vec(Shape4::new(s.n, s.c, 1, 1)?, data)
}

pub fn global_avgpool_backward<T: Scalar>(grad_out: &Tensor4<T>, input_shape: Shape4) -> Result<Tensor4<T>> {
    let expected = Shape4::new(input_shape.n, input_shape.c, 1, 1)?;
    if grad_out.shape() != expected {
        return Err(Error::Shape(format!("grad_out {} expected {expected}", grad_out.shape())));
    }
    let plane = input_shape.plane();
    let inv = T::from_f64_lossy(1.0 / plane as f64);
    let mut data = Vec::with_capacity(input_shape.len());
    for &g in grad_out.data() {
        data.extend(std::iter::repeat_n(g * inv, plane));
    }
    Tensor4::from_vec(input_shape, data)
}

/// Per-channel spatial max, output (n, c, 1, 1) with winner offsets.
pub fn global_maxpool_forward<T: Scalar>(x: &Tensor4<T>) -> Result<(Tensor4<T>, Vec<usize>)> {
    let s = x.shape();
    let plane = s.plane();
    let mut out = Vec::with_capacity(s.n * s.c);
    let mut argmax = Vec::with_capacity(s.n * s.c);
    for (pi, p) in x.data().chunks(plane).enumerate() {
        let mut best = 0;
        for (i, &v) in p.iter().enumerate() {
            if v > p[best] {
                best = i;
            }
        }
        out.push(p[best]);
        argmax.push(pi * plane + best);
    }
    Ok((Tensor4::from_vec(Shape4::new(s.n, s.c, 1, 1)?, out)?, argmax))
}
