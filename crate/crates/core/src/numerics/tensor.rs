//! Dense row-major `f64` tensors.
//!
//! A [`Tensor`] is a plain `shape + data` buffer. Gradients and graph
//! bookkeeping live on [`Tape`](super::Tape) nodes, so parameters stay
//! simple, copyable, checkpointable values.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Standard deviation used for every weight matrix in the project.
pub const INIT_STD: f64 = 0.02;

/// Dense row-major tensor of `f64` values.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Builds a tensor from a shape and matching row-major buffer.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if shape.is_empty() || numel == 0 {
            return Err(Error::shape("tensor", format!("empty shape {shape:?}")));
        }
        if data.len() != numel {
            return Err(Error::shape(
                "tensor",
                format!("shape {shape:?} wants {numel} values, got {}", data.len()),
            ));
        }
        Ok(Tensor { shape, data })
    }

    /// All-zero tensor. Biases use this: the init convention is zero biases.
    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Tensor { shape, data: vec![0.0; numel] }
    }

    /// Constant-filled tensor.
    pub fn full(shape: Vec<usize>, value: f64) -> Self {
        let numel = shape.iter().product();
        Tensor { shape, data: vec![value; numel] }
    }

    /// Single-element tensor of shape `[1]`.
    pub fn scalar(value: f64) -> Self {
        Tensor { shape: vec![1], data: vec![value] }
    }

    /// 2-D tensor from explicit rows; all rows must share a length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() || rows[0].is_empty() {
            return Err(Error::shape("tensor", "from_rows needs at least one non-empty row"));
        }
        let cols = rows[0].len();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::shape("tensor", "ragged rows"));
            }
            data.extend_from_slice(r);
        }
        Ok(Tensor { shape: vec![rows.len(), cols], data })
    }

    /// Gaussian-initialized tensor (mean 0, given std).
    ///
    /// Weight matrices across the project use `std = `[`INIT_STD`].
    pub fn randn(shape: Vec<usize>, std: f64, rng: &mut impl Rng) -> Self {
        let numel = shape.iter().product();
        let dist = Normal::new(0.0, std).expect("std must be finite and non-negative");
        let data = (0..numel).map(|_| dist.sample(rng)).collect();
        Tensor { shape, data }
    }

    /// Tensor shape (row-major).
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    /// Flat value buffer.
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Mutable flat value buffer.
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Number of elements.
    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Row count; 1-D tensors count as a single row.
    pub fn rows(&self) -> usize {
        if self.shape.len() >= 2 {
            self.shape[..self.shape.len() - 1].iter().product()
        } else {
            1
        }
    }

    /// Size of the last axis.
    pub fn cols(&self) -> usize {
        *self.shape.last().expect("tensors are never zero-dimensional")
    }

    /// Element accessor for 2-D tensors.
    pub fn at2(&self, r: usize, c: usize) -> f64 {
        debug_assert_eq!(self.shape.len(), 2, "at2 needs a matrix");
        self.data[r * self.cols() + c]
    }

    /// True when every element is finite.
    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Plain triple-loop matrix product `[m,k] x [k,n] -> [m,n]`.
///
/// This is the single multiplication kernel in the crate; the tape calls it
/// for both forward products and the transposed products in backward rules,
/// so a correctness test here covers every matmul in the system.
pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
    out
}
