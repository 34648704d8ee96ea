//! Dense f64 tensors with a minimal reverse-mode tape and an Adam optimizer.
//!
//! The op set is intentionally small: matrix-vector product, bias add, tanh,
//! concat, mean, dot, norm, truncated cosine and squared error. That is
//! everything a two-layer perceptron encoder with a cosine decoder needs.

pub mod checkpoint;
pub mod gradcheck;
pub mod kernels;
pub mod params;
pub mod tape;

pub use params::{ParamId, ParamStore};
pub use tape::{Grads, NodeId, Tape};

use crate::error::{Error, Result};
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

/// Dense row-major matrix. Vectors are tensors with `cols == 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    data: Vec<f64>,
    rows: usize,
    cols: usize,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor {
            data: vec![0.0; rows * cols],
            rows,
            cols,
        }
    }

    pub fn from_vec(data: Vec<f64>, rows: usize, cols: usize) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "tensor data length {} does not match {}x{}",
                data.len(),
                rows,
                cols
            )));
        }
        Ok(Tensor { data, rows, cols })
    }

    /// Weight init: uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)].
    pub fn uniform_init<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (cols as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound);
        Tensor {
            data: (0..rows * cols).map(|_| dist.sample(rng)).collect(),
            rows,
            cols,
        }
    }

    /// Embedding init: N(0, std^2).
    pub fn gaussian_init<R: Rng>(rows: usize, cols: usize, std: f64, rng: &mut R) -> Self {
        let dist = Normal::new(0.0, std).expect("valid std");
        Tensor {
            data: (0..rows * cols).map(|_| dist.sample(rng)).collect(),
            rows,
            cols,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
