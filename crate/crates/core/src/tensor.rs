//! Dense K-way tensors, mode unfoldings and observation index sets.
//!
//! Storage is row-major (last index fastest). Mode and entry indices in the
//! Rust API are 0-based; the file formats and the command line use 1-based
//! indices.
//!
//! The mode-`k` unfolding places entry `(i_1, .., i_K)` at row `i_k` and column
//! `sum_{m != k} i_m * J_m` with `J_m = prod_{p < m, p != k} n_p`, i.e. the
//! remaining modes are linearized with the smallest mode index varying
//! fastest. With this convention
//! `unfold(cp(A), k) = A_k * (A_K ⊙ .. ⊙ A_{k+1} ⊙ A_{k-1} ⊙ .. ⊙ A_1)^T`.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.len() < 2 {
        return Err(Error::InvalidShape("a tensor needs at least two modes"));
    }
    if shape.contains(&0) {
        return Err(Error::InvalidShape("every extent must be positive"));
    }
    shape
        .iter()
        .try_fold(1usize, |acc, &n| acc.checked_mul(n))
        .ok_or(Error::InvalidShape("element count overflows"))
}

impl DenseTensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let len = check_shape(&shape)?;
        if data.len() != len {
            return Err(Error::DimensionMismatch {
                expected: len,
                actual: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: &[usize], value: f64) -> Result<Self> {
        let len = check_shape(shape)?;
        Ok(Self {
            shape: shape.to_vec(),
            data: vec![value; len],
        })
    }

    /// Builds a tensor by evaluating `f` at every 0-based multi-index, in
    /// storage order.
    pub fn from_fn(shape: &[usize], mut f: impl FnMut(&[usize]) -> f64) -> Result<Self> {
        let len = check_shape(shape)?;
        let mut idx = vec![0usize; shape.len()];
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            data.push(f(&idx));
            increment(&mut idx, shape);
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    #[inline]
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    #[inline]
    pub fn order(&self) -> usize {
        self.shape.len()
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn linear_index(&self, idx: &[usize]) -> Result<usize> {
        linear_index(&self.shape, idx)
    }

    pub fn get(&self, idx: &[usize]) -> Result<f64> {
        Ok(self.data[self.linear_index(idx)?])
    }

    pub fn set(&mut self, idx: &[usize], value: f64) -> Result<()> {
        let i = self.linear_index(idx)?;
        self.data[i] = value;
        Ok(())
    }

    pub fn frobenius_norm(&self) -> f64 {
        libm::sqrt(self.data.iter().map(|v| v * v).sum())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(libm::fabs(*v)))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `self - other`, shapes must agree.
    pub fn sub(&self, other: &DenseTensor) -> Result<DenseTensor> {
        self.check_same_shape(other)?;
        Ok(DenseTensor {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        })
    }

    pub fn check_same_shape(&self, other: &DenseTensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                actual: other.len(),
            });
        }
        Ok(())
    }

    /// Mode-`mode` matricization (0-based mode).
    pub fn unfold(&self, mode: usize) -> Result<Matrix> {
        let order = self.order();
        if mode >= order {
            return Err(Error::ModeOutOfRange { mode, order });
        }
        let rows = self.shape[mode];
        let cols = self.len() / rows;
        let col_strides = unfold_column_strides(&self.shape, mode);
        let mut out = vec![0.0; self.len()];
        let mut idx = vec![0usize; order];
        for &v in &self.data {
            let col: usize = (0..order).filter(|&m| m != mode).map(|m| idx[m] * col_strides[m]).sum();
            out[idx[mode] * cols + col] = v;
            increment(&mut idx, &self.shape);
        }
        Matrix::from_vec(rows, cols, out)
    }

    /// Inverse of [`DenseTensor::unfold`].
    pub fn fold(matrix: &Matrix, mode: usize, shape: &[usize]) -> Result<DenseTensor> {
        let len = check_shape(shape)?;
        let order = shape.len();
        if mode >= order {
            return Err(Error::ModeOutOfRange { mode, order });
        }
        let rows = shape[mode];
        let cols = len / rows;
        if matrix.rows() != rows {
            return Err(Error::DimensionMismatch {
                expected: rows,
                actual: matrix.rows(),
            });
        }
        if matrix.cols() != cols {
            return Err(Error::DimensionMismatch {
                expected: cols,
                actual: matrix.cols(),
            });
        }
        let col_strides = unfold_column_strides(shape, mode);
        let src = matrix.as_slice();
        let mut data = Vec::with_capacity(len);
        let mut idx = vec![0usize; order];
        for _ in 0..len {
            let col: usize = (0..order).filter(|&m| m != mode).map(|m| idx[m] * col_strides[m]).sum();
            data.push(src[idx[mode] * cols + col]);
            increment(&mut idx, shape);
        }
        Ok(DenseTensor {
            shape: shape.to_vec(),
            data,
        })
    }
}

/// Frobenius norm of a tensor.
pub fn frobenius_norm(x: &DenseTensor) -> f64 {
    x.frobenius_norm()
}

/// Column stride of each mode `m != mode` inside the mode-`mode` unfolding.
fn unfold_column_strides(shape: &[usize], mode: usize) -> Vec<usize> {
    let mut strides = vec![0usize; shape.len()];
    let mut acc = 1usize;
    for (m, &n) in shape.iter().enumerate() {
        if m == mode {
            continue;
        }
        strides[m] = acc;
        acc *= n;
    }
    strides
}

/// Advances a row-major multi-index by one position.
#[inline]
pub(crate) fn increment(idx: &mut [usize], shape: &[usize]) {
    for m in (0..shape.len()).rev() {
        idx[m] += 1;
        if idx[m] < shape[m] {
            return;
        }
        idx[m] = 0;
    }
}

pub(crate) fn linear_index(shape: &[usize], idx: &[usize]) -> Result<usize> {
    if idx.len() != shape.len() {
        return Err(Error::DimensionMismatch {
            expected: shape.len(),
            actual: idx.len(),
        });
    }
    let mut lin = 0usize;
    for (&i, &n) in idx.iter().zip(shape) {
        if i >= n {
            return Err(Error::InvalidIndex("index component outside the shape"));
        }
        lin = lin * n + i;
    }
    Ok(lin)
}

/// 0-based multi-index of a row-major linear position.
pub fn multi_index(shape: &[usize], mut linear: usize) -> Vec<usize> {
    let mut idx = vec![0usize; shape.len()];
    for m in (0..shape.len()).rev() {
        idx[m] = linear % shape[m];
        linear /= shape[m];
    }
    idx
}

/// The observed index set Ω, stored as strictly increasing row-major
/// linear positions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObservationSet {
    shape: Vec<usize>,
    indices: Vec<usize>,
    full: bool,
}

impl ObservationSet {
    /// Ω containing every index of `shape`.
    pub fn full(shape: &[usize]) -> Result<Self> {
        let len = check_shape(shape)?;
        Ok(Self {
            shape: shape.to_vec(),
            indices: (0..len).collect(),
            full: true,
        })
    }

    /// From linear positions; they must be strictly increasing and in range.
    pub fn from_linear(shape: &[usize], indices: Vec<usize>) -> Result<Self> {
        let len = check_shape(shape)?;
        if indices.is_empty() {
            return Err(Error::EmptyObservations);
        }
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidIndex("indices must be strictly increasing"));
        }
        if *indices.last().unwrap() >= len {
            return Err(Error::InvalidIndex("index outside the shape"));
        }
        let full = indices.len() == len;
        Ok(Self {
            shape: shape.to_vec(),
            indices,
            full,
        })
    }

    /// From 1-based index tuples in any order. Duplicates are rejected.
    pub fn from_tuples(shape: &[usize], tuples: &[Vec<usize>]) -> Result<Self> {
        let mut lin = Vec::with_capacity(tuples.len());
        for t in tuples {
            if t.contains(&0) {
                return Err(Error::InvalidIndex("tuples are 1-based"));
            }
            let zero: Vec<usize> = t.iter().map(|i| i - 1).collect();
            lin.push(linear_index(shape, &zero)?);
        }
        lin.sort_unstable();
        if lin.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidIndex("duplicate index tuple"));
        }
        Self::from_linear(shape, lin)
    }

    #[inline]
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    #[inline]
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    #[inline]
    pub fn is_full(&self) -> bool {
        self.full
    }

    pub fn contains(&self, linear: usize) -> bool {
        self.indices.binary_search(&linear).is_ok()
    }

    /// 1-based tuple of the `i`-th observed entry.
    pub fn tuple(&self, i: usize) -> Vec<usize> {
        multi_index(&self.shape, self.indices[i])
            .into_iter()
            .map(|v| v + 1)
            .collect()
    }

    /// Number of entries in the full tensor.
    pub fn total(&self) -> usize {
        self.shape.iter().product()
    }
}
