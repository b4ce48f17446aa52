//! Dense numerical kernel: tensors, layers, the GRU cell, Adam and
//! finite-difference gradient checking.
//!
//! Everything trains in `f64`. Layers operate on row-major batches
//! (`rows × width` slices) and keep their weights inside a [`ParamBlock`]
//! so that one optimizer call updates a whole network.

mod checkpoint;
mod gradcheck;
mod gru;
mod layers;
pub mod linalg;
mod ops;
mod params;

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use gradcheck::{grad_check, Objective};
pub use gru::{gru_step, GruCache, GruCell};
pub use layers::Dense;
pub use ops::{
    activation, activation_backward, affine_backward, affine_forward, softmax, softmax_backward,
    softmax_in_place, Activation,
};
pub use params::{Adam, ParamBlock, ParamId};
pub(crate) use ops::softmax_backward_in_place;

use rand::Rng;

use crate::error::{config_err, Error, Result};

/// A dense row-major array of `f64` values.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; len],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let len = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; len],
        }
    }

    /// Builds a tensor, rejecting length mismatches and NaN/Inf entries.
    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if len != data.len() {
            return config_err(format!(
                "tensor shape {shape:?} needs {len} values, got {}",
                data.len()
            ));
        }
        let t = Self {
            shape: shape.to_vec(),
            data,
        };
        t.check_finite("tensor construction")?;
        Ok(t)
    }

    pub fn vector(data: &[f64]) -> Result<Self> {
        Self::from_vec(&[data.len()], data.to_vec())
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::from_vec(&[rows, cols], data)
    }

    /// Uniform initialisation in `[-bound, bound]`.
    pub fn uniform<R: Rng + ?Sized>(shape: &[usize], bound: f64, rng: &mut R) -> Self {
        let len = shape.iter().product();
        let data = (0..len)
            .map(|_| if bound > 0.0 { rng.gen_range(-bound..=bound) } else { 0.0 })
            .collect();
        Self {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Size of the last axis (1 for scalars).
    pub fn cols(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    /// Number of rows when viewed as `rows × cols`.
    pub fn rows(&self) -> usize {
        if self.shape.is_empty() {
            1
        } else {
            self.len() / self.cols().max(1)
        }
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|x| *x = value);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn check_finite(&self, what: &str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(what.to_string()))
        }
    }

    pub fn same_shape(&self, other: &Tensor) -> bool {
        self.shape == other.shape
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Shape check helper shared by the layer code.
pub(crate) fn expect_len(what: &str, got: usize, want: usize) -> Result<()> {
    if got == want {
        Ok(())
    } else {
        config_err(format!("{what}: expected {want} values, got {got}"))
    }
}
