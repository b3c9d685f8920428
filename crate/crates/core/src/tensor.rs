//! Dense row-major tensors over `f32`/`f64`.
//!
//! The tensor type is deliberately small: a shape vector plus a contiguous
//! buffer. Arithmetic between tensors requires exactly matching shapes;
//! the only implicit broadcast anywhere in the crate is scalar-tensor.

use std::fmt;
use std::iter::Sum;

use crate::error::{Error, Result};

/// Element precision of a tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl fmt::Display for Dtype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Dtype::F32 => write!(f, "float32"),
            Dtype::F64 => write!(f, "float64"),
        }
    }
}

/// Scalar element of a [`Tensor`]. Implemented for `f32` and `f64`.
pub trait Scalar:
    num_traits::Float + fmt::Debug + fmt::Display + Default + Sum + Send + Sync + 'static
{
    const DTYPE: Dtype;

    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;

    /// Row-major GEMM: `c = alpha * a(m x k) * b(k x n) + beta * c`.
    fn gemm(m: usize, k: usize, n: usize, alpha: Self, a: &[Self], b: &[Self], beta: Self, c: &mut [Self]);

    /// `c = alpha * a(m x k) * b(n x k)^T + beta * c`; `b` is row-major `n x k`.
    fn gemm_nt(m: usize, k: usize, n: usize, alpha: Self, a: &[Self], b: &[Self], beta: Self, c: &mut [Self]);

    /// `c = alpha * a(k x m)^T * b(k x n) + beta * c`; `a` is row-major `k x m`.
    fn gemm_tn(m: usize, k: usize, n: usize, alpha: Self, a: &[Self], b: &[Self], beta: Self, c: &mut [Self]);
}

macro_rules! impl_scalar {
    ($t:ty, $dtype:expr, $gemm:path) => {
        impl Scalar for $t {
            const DTYPE: Dtype = $dtype;

            fn from_f64(v: f64) -> Self {
                v as $t
            }

            fn as_f64(self) -> f64 {
                self as f64
            }

            fn gemm(m: usize, k: usize, n: usize, alpha: Self, a: &[Self], b: &[Self], beta: Self, c: &mut [Self]) {
                assert_eq!(a.len(), m * k);
                assert_eq!(b.len(), k * n);
                assert_eq!(c.len(), m * n);
                unsafe {
                    $gemm(
                        m, k, n, alpha,
                        a.as_ptr(), k as isize, 1,
                        b.as_ptr(), n as isize, 1,
                        beta,
                        c.as_mut_ptr(), n as isize, 1,
                    );
                }
            }

            fn gemm_nt(m: usize, k: usize, n: usize, alpha: Self, a: &[Self], b: &[Self], beta: Self, c: &mut [Self]) {
                assert_eq!(a.len(), m * k);
                assert_eq!(b.len(), n * k);
                assert_eq!(c.len(), m * n);
                unsafe {
                    $gemm(
                        m, k, n, alpha,
                        a.as_ptr(), k as isize, 1,
                        b.as_ptr(), 1, k as isize,
                        beta,
                        c.as_mut_ptr(), n as isize, 1,
                    );
                }
            }

            fn gemm_tn(m: usize, k: usize, n: usize, alpha: Self, a: &[Self], b: &[Self], beta: Self, c: &mut [Self]) {
                assert_eq!(a.len(), k * m);
                assert_eq!(b.len(), k * n);
                assert_eq!(c.len(), m * n);
                unsafe {
                    $gemm(
                        m, k, n, alpha,
                        a.as_ptr(), 1, m as isize,
                        b.as_ptr(), n as isize, 1,
                        beta,
                        c.as_mut_ptr(), n as isize, 1,
                    );
                }
            }
        }
    };
}

impl_scalar!(f32, Dtype::F32, matrixmultiply::sgemm);
impl_scalar!(f64, Dtype::F64, matrixmultiply::dgemm);

/// Dense n-dimensional array in row-major order.
///
/// Invariant: `shape.iter().product() == data.len()`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T: Scalar = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![T::zero(); len] }
    }

    pub fn filled(shape: &[usize], value: T) -> Self {
        let len = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![value; len] }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let expect: usize = shape.iter().product();
        if expect != data.len() {
            return Err(Error::contract(format!(
                "tensor shape {:?} implies {} elements, buffer has {}",
                shape,
                expect,
                data.len()
            )));
        }
        Ok(Tensor { shape: shape.to_vec(), data })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn dtype(&self) -> Dtype {
        T::DTYPE
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
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

    /// Reinterpret the buffer under a new shape with the same element count.
    pub fn reshaped(mut self, shape: &[usize]) -> Result<Self> {
        let expect: usize = shape.iter().product();
        if expect != self.data.len() {
            return Err(Error::contract(format!(
                "cannot reshape {} elements into {:?}",
                self.data.len(),
                shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape[..] {
            [a, b] => Ok((a, b)),
            _ => Err(Error::contract(format!("expected rank-2 tensor, got shape {:?}", self.shape))),
        }
    }

    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        match self.shape[..] {
            [a, b, c, d] => Ok((a, b, c, d)),
            _ => Err(Error::contract(format!("expected rank-4 tensor, got shape {:?}", self.shape))),
        }
    }

    pub fn fill(&mut self, value: T) {
        self.data.fill(value);
    }

    /// Elementwise `self += other`, shapes must match exactly.
    pub fn add_assign(&mut self, other: &Tensor<T>) -> Result<()> {
        self.check_same_shape(other, "add")?;
        for (d, s) in self.data.iter_mut().zip(other.data.iter()) {
            *d = *d + *s;
        }
        Ok(())
    }

    /// Elementwise `self += alpha * other`.
    pub fn add_scaled(&mut self, other: &Tensor<T>, alpha: T) -> Result<()> {
        self.check_same_shape(other, "add_scaled")?;
        for (d, s) in self.data.iter_mut().zip(other.data.iter()) {
            *d = *d + alpha * *s;
        }
        Ok(())
    }

    pub fn scale(&mut self, alpha: T) {
        for d in self.data.iter_mut() {
            *d = *d * alpha;
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Tensor<T> {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    /// Largest absolute difference; shapes must match exactly.
    pub fn max_abs_diff(&self, other: &Tensor<T>) -> Result<f64> {
        self.check_same_shape(other, "max_abs_diff")?;
        let mut m = 0.0f64;
        for (a, b) in self.data.iter().zip(other.data.iter()) {
            let d = (a.as_f64() - b.as_f64()).abs();
            if d > m {
                m = d;
            }
        }
        Ok(m)
    }

    pub fn is_all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Convert elements to another precision.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }

    fn check_same_shape(&self, other: &Tensor<T>, op: &str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::contract(format!(
                "{op}: shape mismatch {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(())
    }
}

/// A trainable tensor together with its gradient accumulator.
#[derive(Debug, Clone)]
pub struct Parameter<T: Scalar = f32> {
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    pub requires_grad: bool,
}

impl<T: Scalar> Parameter<T> {
    pub fn new(value: Tensor<T>) -> Self {
        let grad = Tensor::zeros(value.shape());
        Parameter { value, grad, requires_grad: true }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }

    pub fn cast<U: Scalar>(&self) -> Parameter<U> {
        Parameter {
            value: self.value.cast(),
            grad: self.grad.cast(),
            requires_grad: self.requires_grad,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_length() {
        assert!(Tensor::<f32>::from_vec(&[2, 3], vec![0.0; 6]).is_ok());
        let err = Tensor::<f32>::from_vec(&[2, 3], vec![0.0; 5]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]"), "message should carry the shape: {msg}");
    }

    #[test]
    fn add_assign_rejects_shape_mismatch() {
        let mut a = Tensor::<f32>::zeros(&[2, 2]);
        let b = Tensor::<f32>::zeros(&[4]);
        assert!(a.add_assign(&b).is_err());
    }

    #[test]
    fn gemm_matches_naive() {
        // 2x3 * 3x2
        let a = vec![1.0f32, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = vec![7.0f32, 8.0, 9.0, 10.0, 11.0, 12.0];
        let mut c = vec![0.0f32; 4];
        f32::gemm(2, 3, 2, 1.0, &a, &b, 0.0, &mut c);
        assert_eq!(c, vec![58.0, 64.0, 139.0, 154.0]);
    }

    #[test]
    fn cast_round_trips_exactly_for_f32_values() {
        let t = Tensor::<f32>::from_vec(&[3], vec![0.5, -1.25, 3.0]).unwrap();
        let back: Tensor<f32> = t.cast::<f64>().cast();
        assert_eq!(t, back);
    }
}
