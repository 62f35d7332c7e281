//! Dense row-major tensor container.
//!
//! Layout convention is B×C×F×T (batch, channel, frequency, time) for feature
//! maps; lower-rank tensors are used freely for parameters and vectors.
//! Buffers are reference-counted so cloning a tensor is cheap; mutation goes
//! through [`Tensor::data_mut`], which copies on write when shared.

use std::sync::Arc;

use rand::Rng;

use crate::error::{shape_err, Result};

/// Scalar element type supported by the library: `f32` for training,
/// `f64` for verification harnesses.
pub trait Scalar:
    num_traits::Float + Send + Sync + 'static + std::fmt::Debug + std::fmt::Display
{
    const DTYPE_CODE: u8;

    /// c = alpha * a@b + beta * c with explicit row/col strides per operand.
    #[allow(clippy::too_many_arguments)]
    fn gemm_strided(
        m: usize, k: usize, n: usize, alpha: Self,
        a: &[Self], rsa: isize, csa: isize,
        b: &[Self], rsb: isize, csb: isize,
        beta: Self, c: &mut [Self],
    );

    /// c = alpha * a@b + beta * c, row-major, dims m×k, k×n, m×n.
    fn gemm(m: usize, k: usize, n: usize, alpha: Self, a: &[Self], b: &[Self], beta: Self, c: &mut [Self]) {
        Self::gemm_strided(m, k, n, alpha, a, k as isize, 1, b, n as isize, 1, beta, c);
    }

    /// c = alpha * op(a)@op(b) + beta*c where `a_t`/`b_t` transpose operands
    /// stored row-major with their *pre-transpose* dims (a: k×m if a_t).
    #[allow(clippy::too_many_arguments)]
    fn gemm_tr(
        m: usize, k: usize, n: usize, alpha: Self,
        a: &[Self], a_t: bool, b: &[Self], b_t: bool,
        beta: Self, c: &mut [Self],
    ) {
        let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
        let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
        Self::gemm_strided(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c);
    }

    fn from_f64(v: f64) -> Self;
    fn to_f64s(self) -> f64;
}

impl Scalar for f32 {
    const DTYPE_CODE: u8 = 0;

    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64s(self) -> f64 {
        self as f64
    }

    fn gemm_strided(
        m: usize, k: usize, n: usize, alpha: f32,
        a: &[f32], rsa: isize, csa: isize,
        b: &[f32], rsb: isize, csb: isize,
        beta: f32, c: &mut [f32],
    ) {
        debug_assert!(c.len() >= m * n);
        unsafe {
            matrixmultiply::sgemm(
                m, k, n, alpha,
                a.as_ptr(), rsa, csa,
                b.as_ptr(), rsb, csb,
                beta,
                c.as_mut_ptr(), n as isize, 1,
            );
        }
    }
}

impl Scalar for f64 {
    const DTYPE_CODE: u8 = 1;

    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64s(self) -> f64 {
        self
    }

    fn gemm_strided(
        m: usize, k: usize, n: usize, alpha: f64,
        a: &[f64], rsa: isize, csa: isize,
        b: &[f64], rsb: isize, csb: isize,
        beta: f64, c: &mut [f64],
    ) {
        debug_assert!(c.len() >= m * n);
        unsafe {
            matrixmultiply::dgemm(
                m, k, n, alpha,
                a.as_ptr(), rsa, csa,
                b.as_ptr(), rsb, csb,
                beta,
                c.as_mut_ptr(), n as isize, 1,
            );
        }
    }
}

/// Dense N-dimensional array, row-major, contiguous.
#[derive(Clone, Debug)]
pub struct Tensor<F: Scalar> {
    shape: Vec<usize>,
    data: Arc<Vec<F>>,
}

impl<F: Scalar> Tensor<F> {
    pub fn new(shape: &[usize], data: Vec<F>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(shape_err(format!(
                "tensor shape {:?} needs {} elements, got {}",
                shape,
                n,
                data.len()
            )));
        }
        Ok(Tensor { shape: shape.to_vec(), data: Arc::new(data) })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n: usize = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: Arc::new(vec![F::zero(); n]) }
    }

    pub fn full(shape: &[usize], v: F) -> Self {
        let n: usize = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: Arc::new(vec![v; n]) }
    }

    pub fn scalar(v: F) -> Self {
        Tensor { shape: vec![1], data: Arc::new(vec![v]) }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> F) -> Self {
        let n: usize = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: Arc::new((0..n).map(|i| f(i)).collect()) }
    }

    /// Uniform samples in [lo, hi).
    pub fn rand_uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut impl Rng) -> Self {
        Self::from_fn(shape, |_| F::from_f64(rng.gen_range(lo..hi)))
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    /// Mutable access; copies the buffer if it is shared.
    pub fn data_mut(&mut self) -> &mut [F] {
        Arc::make_mut(&mut self.data).as_mut_slice()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Element at a multi-index. Bounds-checked in debug builds.
    pub fn at(&self, idx: &[usize]) -> F {
        debug_assert_eq!(idx.len(), self.shape.len());
        let mut off = 0;
        for (i, (&x, &d)) in idx.iter().zip(&self.shape).enumerate() {
            debug_assert!(x < d, "index {} out of bounds for axis {} (extent {})", x, i, d);
            off = off * d + x;
        }
        self.data[off]
    }

    /// Reinterpret with a new shape of equal element count.
    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.len() {
            return Err(shape_err(format!(
                "cannot reshape {:?} ({} elems) to {:?}",
                self.shape,
                self.len(),
                shape
            )));
        }
        Ok(Tensor { shape: shape.to_vec(), data: Arc::clone(&self.data) })
    }

    pub fn map(&self, f: impl Fn(F) -> F) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: Arc::new(self.data.iter().map(|&v| f(v)).collect()),
        }
    }

    pub fn zip(&self, other: &Self, f: impl Fn(F, F) -> F) -> Result<Self> {
        if self.shape != other.shape {
            return Err(shape_err(format!("zip on {:?} vs {:?}", self.shape, other.shape)));
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: Arc::new(self.data.iter().zip(other.data.iter()).map(|(&a, &b)| f(a, b)).collect()),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip(other, |a, b| a - b)
    }

    pub fn scale(&self, s: F) -> Self {
        self.map(|v| v * s)
    }

    pub fn sum(&self) -> F {
        self.data.iter().fold(F::zero(), |acc, &v| acc + v)
    }

    pub fn min_max(&self) -> (F, F) {
        let mut lo = F::infinity();
        let mut hi = F::neg_infinity();
        for &v in self.data.iter() {
            if v < lo {
                lo = v;
            }
            if v > hi {
                hi = v;
            }
        }
        (lo, hi)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Largest absolute elementwise difference.
    pub fn max_abs_diff(&self, other: &Self) -> Result<F> {
        if self.shape != other.shape {
            return Err(shape_err(format!("compare {:?} vs {:?}", self.shape, other.shape)));
        }
        let mut m = F::zero();
        for (&a, &b) in self.data.iter().zip(other.data.iter()) {
            let d = (a - b).abs();
            if d > m {
                m = d;
            }
        }
        Ok(m)
    }

    pub fn to_f64(&self) -> Tensor<f64> {
        Tensor {
            shape: self.shape.clone(),
            data: Arc::new(self.data.iter().map(|v| v.to_f64s()).collect()),
        }
    }

    pub fn to_f32(&self) -> Tensor<f32> {
        Tensor {
            shape: self.shape.clone(),
            data: Arc::new(self.data.iter().map(|v| v.to_f64s() as f32).collect()),
        }
    }
}

/// Flat offset into a rank-4 tensor of shape [b, c, f, t].
#[inline(always)]
pub fn idx4(shape: &[usize], b: usize, c: usize, f: usize, t: usize) -> usize {
    ((b * shape[1] + c) * shape[2] + f) * shape[3] + t
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_product_invariant() {
        assert!(Tensor::<f32>::new(&[2, 3], vec![0.0; 6]).is_ok());
        assert!(Tensor::<f32>::new(&[2, 3], vec![0.0; 5]).is_err());
    }

    #[test]
    fn gemm_matches_naive() {
        let a = [1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0]; // 2x3
        let b = [7.0f64, 8.0, 9.0, 10.0, 11.0, 12.0]; // 3x2
        let mut c = [0.0f64; 4];
        f64::gemm(2, 3, 2, 1.0, &a, &b, 0.0, &mut c);
        assert_eq!(c, [58.0, 64.0, 139.0, 154.0]);
    }

    #[test]
    fn reshape_preserves_data() {
        let t = Tensor::<f32>::new(&[2, 3], (0..6).map(|i| i as f32).collect()).unwrap();
        let r = t.reshape(&[3, 2]).unwrap();
        assert_eq!(r.at(&[2, 1]), 5.0);
        assert!(t.reshape(&[4, 2]).is_err());
    }
}
