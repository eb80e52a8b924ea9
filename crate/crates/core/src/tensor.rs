//! Dense rank-4 tensors in NCHW order.

use std::fmt;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng::CounterRng;

/// Element type tag; the byte value is the checkpoint dtype code.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum DType {
    F32 = 0,
    F64 = 1,
}

impl DType {
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(DType::F32),
            1 => Some(DType::F64),
            _ => None,
        }
    }

    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

impl fmt::Display for DType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DType::F32 => "f32",
            DType::F64 => "f64",
        })
    }
}

/// Strides of a row-major or transposed matrix view: (row stride, column stride).
pub type Strides = (isize, isize);

pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + Default
    + fmt::Debug
    + fmt::Display
    + Send
    + Sync
    + AddAssign
    + SubAssign
    + MulAssign
    + Sum
    + 'static
{
    const DTYPE: DType;

    /// `c <- alpha * a·b + beta * c` for an (m×k)·(k×n) product.
    ///
    /// # Safety
    /// Every element addressed through the given strides must lie inside the
    /// corresponding slice. [`gemm`] checks this before calling.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        sa: Strides,
        b: *const Self,
        sb: Strides,
        beta: Self,
        c: *mut Self,
        sc: Strides,
    );

    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;

    #[inline]
    fn from_f64_lossy(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).unwrap_or_else(Self::nan)
    }

    #[inline]
    fn as_f64(self) -> f64 {
        ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {
    const DTYPE: DType = DType::F32;

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        sa: Strides,
        b: *const f32,
        sb: Strides,
        beta: f32,
        c: *mut f32,
        sc: Strides,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, sa.0, sa.1, b, sb.0, sb.1, beta, c, sc.0, sc.1)
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> f32 {
        f32::from_le_bytes(bytes[..4].try_into().expect("4 bytes"))
    }
}

impl Scalar for f64 {
    const DTYPE: DType = DType::F64;

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        sa: Strides,
        b: *const f64,
        sb: Strides,
        beta: f64,
        c: *mut f64,
        sc: Strides,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, sa.0, sa.1, b, sb.0, sb.1, beta, c, sc.0, sc.1)
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> f64 {
        f64::from_le_bytes(bytes[..8].try_into().expect("8 bytes"))
    }
}

fn max_offset(rows: usize, cols: usize, s: Strides) -> usize {
    if rows == 0 || cols == 0 {
        return 0;
    }
    assert!(s.0 >= 0 && s.1 >= 0, "negative strides are not supported");
    (rows - 1) * s.0 as usize + (cols - 1) * s.1 as usize
}

/// Bounds-checked matrix product `c <- alpha * a·b + beta * c`.
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    alpha: T,
    a: &[T],
    sa: Strides,
    b: &[T],
    sb: Strides,
    beta: T,
    c: &mut [T],
    sc: Strides,
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(k == 0 || max_offset(m, k, sa) < a.len(), "gemm: lhs out of bounds");
    assert!(k == 0 || max_offset(k, n, sb) < b.len(), "gemm: rhs out of bounds");
    assert!(max_offset(m, n, sc) < c.len(), "gemm: output out of bounds");
    // SAFETY: all addressed elements were checked to be in bounds above, and
    // `c` is an exclusive borrow distinct from `a` and `b`.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            sa,
            b.as_ptr(),
            sb,
            beta,
            c.as_mut_ptr(),
            sc,
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct Shape4 {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape4 {
    pub fn new(n: usize, c: usize, h: usize, w: usize) -> Result<Self> {
        let s = Shape4 { n, c, h, w };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<usize> {
        if self.n == 0 || self.c == 0 || self.h == 0 || self.w == 0 {
            return Err(Error::Shape(format!("all dimensions must be >= 1, got {self}")));
        }
        self.n
            .checked_mul(self.c)
            .and_then(|v| v.checked_mul(self.h))
            .and_then(|v| v.checked_mul(self.w))
            .filter(|&v| v <= isize::MAX as usize / 8)
            .ok_or_else(|| Error::Size(format!("{self} exceeds addressable size")))
    }

    /// Element count. Only meaningful for validated shapes.
    pub fn len(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Elements per sample (c·h·w).
    pub fn sample_len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    #[inline]
    pub fn offset(&self, i: usize, j: usize, y: usize, x: usize) -> usize {
        ((i * self.c + j) * self.h + y) * self.w + x
    }

    #[inline]
    pub fn unflatten(&self, offset: usize) -> (usize, usize, usize, usize) {
        let x = offset % self.w;
        let rest = offset / self.w;
        let y = rest % self.h;
        let rest = rest / self.h;
        (rest / self.c, rest % self.c, y, x)
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }
}

impl fmt::Display for Shape4 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.n, self.c, self.h, self.w)
    }
}

/// Per-sample image dimensions (channels, height, width).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct ImageShape {
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl ImageShape {
    pub fn new(c: usize, h: usize, w: usize) -> Self {
        Self { c, h, w }
    }

    pub fn len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn batch(&self, n: usize) -> Result<Shape4> {
        Shape4::new(n, self.c, self.h, self.w)
    }
}

impl From<Shape4> for ImageShape {
    fn from(s: Shape4) -> Self {
        Self { c: s.c, h: s.h, w: s.w }
    }
}

impl fmt::Display for ImageShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.c, self.h, self.w)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor4<T> {
    shape: Shape4,
    data: Vec<T>,
}

impl<T: Scalar> Tensor4<T> {
    pub fn from_vec(shape: Shape4, data: Vec<T>) -> Result<Self> {
        let len = shape.validate()?;
        if data.len() != len {
            return Err(Error::Shape(format!(
                "data length {} does not match shape {shape} ({len} elements)",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Shape4) -> Result<Self> {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: Shape4, value: T) -> Result<Self> {
        let len = shape.validate()?;
        Ok(Self {
            shape,
            data: vec![value; len],
        })
    }

    /// Uniform samples in `[lo, hi)`, element `i` drawn from stream position `i`.
    pub fn fill_random_uniform(shape: Shape4, lo: f64, hi: f64, rng: &CounterRng) -> Result<Self> {
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::Argument(format!("uniform range requires lo < hi, got [{lo}, {hi})")));
        }
        let len = shape.validate()?;
        let hi_t = T::from_f64_lossy(hi);
        let data = (0..len as u64)
            .map(|i| {
                let v = T::from_f64_lossy(lo + (hi - lo) * rng.unit_at(i));
                // Rounding into a narrower type can land exactly on `hi`.
                if v >= hi_t {
                    T::from_f64_lossy(lo)
                } else {
                    v
                }
            })
            .collect();
        Ok(Self { shape, data })
    }

    /// Normal samples with the given standard deviation and zero mean.
    pub fn fill_random_normal(shape: Shape4, std: f64, rng: &CounterRng) -> Result<Self> {
        let len = shape.validate()?;
        let mut rng = rng.clone();
        let data = (0..len)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                T::from_f64_lossy(z * std)
            })
            .collect();
        Ok(Self { shape, data })
    }

    pub fn shape(&self) -> Shape4 {
        self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, y: usize, x: usize) -> T {
        self.data[self.shape.offset(i, j, y, x)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, y: usize, x: usize, v: T) {
        let o = self.shape.offset(i, j, y, x);
        self.data[o] = v;
    }

    /// Contiguous slice holding sample `i`.
    pub fn sample(&self, i: usize) -> &[T] {
        let len = self.shape.sample_len();
        &self.data[i * len..(i + 1) * len]
    }

    pub fn reshape(self, shape: Shape4) -> Result<Self> {
        let len = shape.validate()?;
        if len != self.data.len() {
            return Err(Error::Shape(format!("cannot reshape {} to {shape}", self.shape)));
        }
        Ok(Self { shape, data: self.data })
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_with(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.check_same_shape(other)?;
        Ok(Self {
            shape: self.shape,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a * b)
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.check_same_shape(other)?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn mul_scalar(&self, s: T) -> Self {
        self.map(|v| v * s)
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    /// Sum accumulated in f64 regardless of element type.
    pub fn sum_f64(&self) -> f64 {
        self.data.iter().map(|v| v.as_f64()).sum()
    }

    pub fn max_reduce(&self) -> T {
        self.data.iter().copied().fold(T::neg_infinity(), T::max)
    }

    pub fn fill(&mut self, v: T) {
        self.data.iter_mut().for_each(|d| *d = v);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> Tensor4<U> {
        Tensor4 {
            shape: self.shape,
            data: self.data.iter().map(|v| U::from_f64_lossy(v.as_f64())).collect(),
        }
    }

    fn check_same_shape(&self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!(
                "dimension mismatch: {} vs {}",
                self.shape, other.shape
            )));
        }
        Ok(())
    }
}
