use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

use crate::error::{shape_err, Result};

/// Floating point element type of every tensor.
///
/// Training runs use `f32`; gradient checks instantiate the same models
/// with `f64`.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + 'static
{
    /// `c = alpha * a·b + beta * c` on strided row/column views.
    ///
    /// # Safety
    /// Strides must address memory inside the given buffers.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn c(x: f64) -> Self {
        Self::from_f64(x).expect("representable constant")
    }

    fn f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

impl Scalar for f64 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

/// Accumulates `out (m×n) += op(a) · op(b)` where `op` optionally transposes
/// a row-major operand. `a` is stored as `m×k` (or `k×m` when `ta`), `b` as
/// `k×n` (or `n×k` when `tb`).
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm_acc<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    ta: bool,
    b: &[T],
    tb: bool,
    out: &mut [T],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    // Row-vector products dominate recurrent steps; matrixmultiply packs its
    // operands, which costs as much as the product itself at this size.
    if m <= 2 && !ta && !tb {
        for i in 0..m {
            let orow = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let av = a[i * k + p];
                if av == T::zero() {
                    continue;
                }
                let brow = &b[p * n..(p + 1) * n];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
        }
        return;
    }
    if m <= 2 && !ta && tb {
        for i in 0..m {
            let arow = &a[i * k..(i + 1) * k];
            for j in 0..n {
                let brow = &b[j * k..(j + 1) * k];
                let mut s = T::zero();
                for (&x, &y) in arow.iter().zip(brow) {
                    s += x * y;
                }
                out[i * n + j] += s;
            }
        }
        return;
    }
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            T::one(),
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            T::one(),
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Dense row-major array.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        if shape.contains(&0) {
            return shape_err("tensor", format!("zero-sized dimension in {shape:?}"));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return shape_err(
                "tensor",
                format!("shape {shape:?} holds {numel} values, got {}", data.len()),
            );
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; numel],
        }
    }

    pub fn scalar(value: T) -> Self {
        Tensor {
            shape: vec![1, 1],
            data: vec![value],
        }
    }

    /// A `1×n` row vector.
    pub fn row(values: Vec<T>) -> Self {
        Tensor {
            shape: vec![1, values.len()],
            data: values,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn from_f64(shape: &[usize], values: &[f64]) -> Result<Self> {
        Self::new(shape.to_vec(), values.iter().map(|&v| T::c(v)).collect())
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = T::one();
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Leading dimension for rank 2, 1 for vectors.
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            0 | 1 => 1,
            _ => self.shape[..self.shape.len() - 1].iter().product(),
        }
    }

    /// Trailing dimension.
    pub fn cols(&self) -> usize {
        *self.shape.last().unwrap_or(&1)
    }

    pub fn row_slice(&self, r: usize) -> &[T] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn at(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols() + c]
    }

    pub fn item(&self) -> T {
        self.data[0]
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() {
            return shape_err("reshape", format!("{:?} -> {shape:?}", self.shape));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Tensor<T>) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale_assign(&mut self, s: T) {
        for a in &mut self.data {
            *a *= s;
        }
    }

    pub fn sq_norm(&self) -> T {
        self.data.iter().map(|&v| v * v).sum()
    }

    /// Rows `start..start+len` of a 2-D tensor.
    pub fn slice_rows(&self, start: usize, len: usize) -> Result<Self> {
        let c = self.cols();
        if start + len > self.rows() || len == 0 {
            return shape_err(
                "slice_rows",
                format!("rows {start}..{} of {:?}", start + len, self.shape),
            );
        }
        Tensor::new(vec![len, c], self.data[start * c..(start + len) * c].to_vec())
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::c(v.f64())).collect(),
        }
    }

    /// Plain (non-differentiable) matrix product.
    pub fn matmul(&self, other: &Tensor<T>) -> Result<Self> {
        let (m, k) = (self.rows(), self.cols());
        let (k2, n) = (other.rows(), other.cols());
        if k != k2 {
            return shape_err("matmul", format!("{:?} x {:?}", self.shape, other.shape));
        }
        let mut out = vec![T::zero(); m * n];
        gemm_acc(m, k, n, &self.data, false, &other.data, false, &mut out);
        Tensor::new(vec![m, n], out)
    }
}
