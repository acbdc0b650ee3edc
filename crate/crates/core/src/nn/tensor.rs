use crate::error::{Error, Result};
use crate::scalar::{Real, Scalar};

/// Dense row-major tensor. Most of the crate only needs rank 2 (`batch × width`).
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<S> {
    shape: Vec<usize>,
    data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    pub fn new(shape: Vec<usize>, data: Vec<S>) -> Result<Self> {
        if shape.is_empty() || shape.iter().any(|&d| d == 0) {
            return Err(Error::shape(format!("dimensions must be positive, got {shape:?}")));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::shape(format!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<S>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        let n = shape.iter().product();
        Self::new(shape, vec![S::zero(); n])
    }

    pub fn from_rows(rows: &[Vec<S>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::shape("ragged rows"));
        }
        let data = rows.iter().flatten().copied().collect();
        Self::matrix(rows.len(), cols, data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Width of a rank-2 tensor (product of trailing dims otherwise).
    pub fn cols(&self) -> usize {
        self.shape[1..].iter().product()
    }

    pub fn row(&self, i: usize) -> &[S] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn select_rows(&self, indices: &[usize]) -> Result<Self> {
        let c = self.cols();
        let mut data = Vec::with_capacity(indices.len() * c);
        for &i in indices {
            if i >= self.rows() {
                return Err(Error::shape(format!("row {i} out of range {}", self.rows())));
            }
            data.extend_from_slice(self.row(i));
        }
        let mut shape = self.shape.clone();
        shape[0] = indices.len();
        Self::new(shape, data)
    }

    /// Keeps the first `cols` columns of a rank-2 tensor.
    pub fn leading_columns(&self, cols: usize) -> Result<Self> {
        let width = self.cols();
        if cols == 0 || cols > width {
            return Err(Error::shape(format!("cannot take {cols} of {width} columns")));
        }
        let data = (0..self.rows())
            .flat_map(|r| self.row(r)[..cols].iter().copied())
            .collect();
        Self::matrix(self.rows(), cols, data)
    }

    pub fn map<T: Scalar>(&self, f: impl Fn(S) -> T) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

impl<S: Real> Tensor<S> {
    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn ensure_finite(&self, what: &str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(what.to_string()))
        }
    }

    pub fn cast<T: Real>(&self) -> Tensor<T> {
        self.map(|v| T::narrow(v.widen()))
    }
}

/// Selects columns `0..cols` of every row: the first output nodes of a wider
/// carrier act as the outputs of a narrower task.
pub fn truncate_outputs<S: Scalar>(logits: &Tensor<S>, cols: usize) -> Result<Tensor<S>> {
    logits.leading_columns(cols)
}
