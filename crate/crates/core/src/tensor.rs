//! Dense row-major tensors and the binary attention mask.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::shape(
                "tensor",
                format!("shape {shape:?} needs {numel} values, got {}", data.len()),
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let numel = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; numel],
        }
    }

    pub fn scalar(value: T) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    /// Builds a matrix from equally long rows.
    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::shape("from_rows", "ragged rows"));
        }
        let data = rows.iter().flatten().copied().collect();
        Self::new(vec![rows.len(), cols], data)
    }

    pub fn from_f64(shape: &[usize], values: &[f64]) -> Result<Self> {
        Self::new(shape.to_vec(), values.iter().map(|&v| T::of(v)).collect())
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

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1 && self.shape.iter().all(|&d| d == 1)
    }

    /// Rows of the tensor viewed as a matrix whose column count is the last dimension.
    pub fn rows(&self) -> usize {
        if self.shape.is_empty() {
            1
        } else {
            self.data.len() / self.cols().max(1)
        }
    }

    pub fn cols(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    pub fn row(&self, i: usize) -> &[T] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn item(&self) -> T {
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.as_f64()).collect()
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.shape, other.shape, "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max)
    }

    pub(crate) fn matrix_dims(&self, op: &'static str) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            [r, c] => Ok((*r, *c)),
            other => Err(Error::shape(op, format!("expected a matrix, got shape {other:?}"))),
        }
    }
}

/// Binary attention mask over a square sequence. `allowed(i, j)` means query
/// position `i` may read key position `j`.
///
/// `prefix_len` records how many leading positions form the bidirectional
/// audio-visual prefix; it is zero for purely causal or full masks.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttentionMask {
    size: usize,
    prefix_len: usize,
    bits: Vec<bool>,
}

impl AttentionMask {
    pub fn full(size: usize) -> Self {
        Self {
            size,
            prefix_len: size,
            bits: vec![true; size * size],
        }
    }

    pub fn from_fn(size: usize, prefix_len: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(size * size);
        for i in 0..size {
            for j in 0..size {
                bits.push(f(i, j));
            }
        }
        Self {
            size,
            prefix_len,
            bits,
        }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn prefix_len(&self) -> usize {
        self.prefix_len
    }

    #[inline]
    pub fn allowed(&self, i: usize, j: usize) -> bool {
        self.bits[i * self.size + j]
    }

    pub fn row(&self, i: usize) -> &[bool] {
        &self.bits[i * self.size..(i + 1) * self.size]
    }

    /// Mask as a 0/1 integer matrix, mostly for display and tests.
    pub fn to_matrix(&self) -> Vec<Vec<u8>> {
        (0..self.size)
            .map(|i| self.row(i).iter().map(|&b| u8::from(b)).collect())
            .collect()
    }
}
