//! Minimal reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation executed on it in order; [`Graph::backward`]
//! walks that record in exact reverse. Parameters are copied into the graph as
//! leaves for each forward pass, and their gradients read back afterwards.
//!
//! The operator set is deliberately small: it is what the Self-ONN layers and the
//! dense-mobile network need, nothing more. Compute runs in `f32` by default; every
//! operation is generic over [`Scalar`] so gradient checks can run in `f64`.

mod adam;
mod conv;
mod graph;

pub use adam::{AdamConfig, AdamState};
pub use graph::{BatchStats, BnMode, ConvParams, Graph, Var};

use num_traits::Float;
use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("parameter error: {0}")]
    Parameter(String),
    #[error("input error: {0}")]
    Input(String),
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("variable does not belong to this graph")]
    DetachedGraph,
    #[error("backward already ran on this graph; call zero_grad first")]
    BackwardTwice,
}

pub type Result<T> = std::result::Result<T, TensorError>;

/// Real element type of a tensor.
pub trait Scalar:
    Float
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
{
    /// Dtype code used by the checkpoint container.
    const DTYPE: u8;

    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;

    /// `c = a·b (+ c when accumulate)` for row-major `a: m×k`, `b: k×n`.
    /// `a_t`/`b_t` mean the operand is stored transposed.
    #[allow(clippy::too_many_arguments)]
    fn gemm(m: usize, k: usize, n: usize, a: &[Self], a_t: bool, b: &[Self], b_t: bool, c: &mut [Self], accumulate: bool);

    fn to_le_bytes_vec(data: &[Self]) -> Vec<u8>;
    fn from_le_bytes_slice(bytes: &[u8]) -> Vec<Self>;
}

fn strides(rows: usize, cols: usize, transposed: bool) -> (isize, isize) {
    if transposed {
        (1, rows as isize)
    } else {
        (cols as isize, 1)
    }
}

macro_rules! impl_scalar {
    ($t:ty, $code:expr, $gemm:path) => {
        impl Scalar for $t {
            const DTYPE: u8 = $code;

            fn from_f64(v: f64) -> Self {
                v as $t
            }

            fn to_f64(self) -> f64 {
                self as f64
            }

            fn gemm(m: usize, k: usize, n: usize, a: &[Self], a_t: bool, b: &[Self], b_t: bool, c: &mut [Self], accumulate: bool) {
                assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n, "gemm operand too small");
                if m == 0 || n == 0 {
                    return;
                }
                let (rsa, csa) = strides(m, k, a_t);
                let (rsb, csb) = strides(k, n, b_t);
                let beta = if accumulate { 1.0 } else { 0.0 };
                // SAFETY: bounds asserted above; strides describe dense row-major storage.
                unsafe {
                    $gemm(m, k, n, 1.0, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), n as isize, 1);
                }
            }

            fn to_le_bytes_vec(data: &[Self]) -> Vec<u8> {
                data.iter().flat_map(|v| v.to_le_bytes()).collect()
            }

            fn from_le_bytes_slice(bytes: &[u8]) -> Vec<Self> {
                const W: usize = std::mem::size_of::<$t>();
                bytes
                    .chunks_exact(W)
                    .map(|c| <$t>::from_le_bytes(c.try_into().expect("chunk width")))
                    .collect()
            }
        }
    };
}

impl_scalar!(f32, 0, matrixmultiply::sgemm);
impl_scalar!(f64, 1, matrixmultiply::dgemm);

/// Dense row-major n-dimensional array.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(TensorError::Dimension(format!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let n = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![value; n] }
    }

    pub fn scalar(value: T) -> Self {
        Self { shape: vec![], data: vec![value] }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let n: usize = shape.iter().product();
        Self { shape: shape.to_vec(), data: (0..n).map(&mut f).collect() }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1 && self.shape.iter().all(|&d| d == 1)
    }

    pub fn item(&self) -> T {
        self.data[0]
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(TensorError::Dimension(format!("cannot reshape {:?} to {shape:?}", self.shape)));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// Shape as `[N, C, H, W]`, or a dimension error.
    pub fn dims4(&self) -> Result<[usize; 4]> {
        match self.shape[..] {
            [n, c, h, w] => Ok([n, c, h, w]),
            _ => Err(TensorError::Dimension(format!("expected rank-4 tensor, got {:?}", self.shape))),
        }
    }

    pub fn dims2(&self) -> Result<[usize; 2]> {
        match self.shape[..] {
            [n, d] => Ok([n, d]),
            _ => Err(TensorError::Dimension(format!("expected rank-2 tensor, got {:?}", self.shape))),
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    /// Convert element type (used by the 64-bit verification path).
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|v| U::from_f64(Scalar::to_f64(*v))).collect() }
    }

    /// Concatenate rank-4 tensors along the batch axis.
    pub fn stack_batch(items: &[Tensor<T>]) -> Result<Self> {
        let first = items.first().ok_or_else(|| TensorError::Input("empty batch".into()))?;
        let [_, c, h, w] = first.dims4()?;
        let mut data = Vec::with_capacity(items.len() * first.numel());
        let mut n = 0;
        for t in items {
            let [tn, tc, th, tw] = t.dims4()?;
            if (tc, th, tw) != (c, h, w) {
                return Err(TensorError::Dimension(format!("batch item {:?} vs {:?}", t.shape, first.shape)));
            }
            n += tn;
            data.extend_from_slice(&t.data);
        }
        Ok(Self { shape: vec![n, c, h, w], data })
    }

    /// Slice sample `i` of a batched tensor, keeping a leading axis of 1.
    pub fn batch_item(&self, i: usize) -> Result<Self> {
        let n = *self.shape.first().ok_or_else(|| TensorError::Dimension("scalar has no batch axis".into()))?;
        if i >= n {
            return Err(TensorError::Input(format!("batch index {i} out of range {n}")));
        }
        let per = self.data.len() / n;
        let mut shape = self.shape.clone();
        shape[0] = 1;
        Ok(Self { shape, data: self.data[i * per..(i + 1) * per].to_vec() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_checks_length() {
        assert!(Tensor::<f32>::new(vec![2, 3], vec![0.0; 6]).is_ok());
        assert!(matches!(Tensor::<f32>::new(vec![2, 3], vec![0.0; 5]), Err(TensorError::Dimension(_))));
    }

    #[test]
    fn gemm_transposes() {
        // a = [[1,2],[3,4]], b = [[5,6],[7,8]]
        let a = [1.0f64, 2.0, 3.0, 4.0];
        let b = [5.0f64, 6.0, 7.0, 8.0];
        let mut c = [0.0f64; 4];
        f64::gemm(2, 2, 2, &a, false, &b, false, &mut c, false);
        assert_eq!(c, [19.0, 22.0, 43.0, 50.0]);
        f64::gemm(2, 2, 2, &a, true, &b, false, &mut c, false);
        assert_eq!(c, [26.0, 30.0, 38.0, 44.0]);
        f64::gemm(2, 2, 2, &a, false, &b, true, &mut c, false);
        assert_eq!(c, [17.0, 23.0, 39.0, 53.0]);
        f64::gemm(2, 2, 2, &a, false, &b, true, &mut c, true);
        assert_eq!(c, [34.0, 46.0, 78.0, 106.0]);
    }

    #[test]
    fn bytes_round_trip() {
        let v = vec![1.5f32, -0.0, f32::MIN_POSITIVE, 3.25e7];
        assert_eq!(f32::from_le_bytes_slice(&f32::to_le_bytes_vec(&v)), v);
    }
}
