//! Dense numerics: elementary functions, the differentiation tape and the
//! finite-difference checker.

mod gradcheck;
mod ops;
mod tape;

pub use gradcheck::{grad_check, relative_error, GradCheckReport, DEFAULT_STEP, GRAD_TOLERANCE};
pub use ops::{
    cosine_similarity, interp_matrix, kl_divergence, linear_interp_time, sigmoid, softmax, Cosine,
};
pub use tape::{Gradients, Graph, Var, KL_EPS, NORM_EPS, ZERO_NORM};

use crate::error::{Error, Result};

/// Shaped row-major tensor used at serialization boundaries.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Builds a tensor, rejecting zero dimensions, length mismatches and
    /// non-finite values.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::invalid(format!("tensor shape {shape:?} has a zero dimension")));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::invalid(format!(
                "tensor shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("tensor contains non-finite values"));
        }
        Ok(Self { shape, data })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_matrix(self) -> Result<ndarray::Array2<f64>> {
        let (r, c) = match self.shape.as_slice() {
            [r, c] => (*r, *c),
            [n] => (1, *n),
            other => return Err(Error::invalid(format!("tensor of rank {} is not a matrix", other.len()))),
        };
        Ok(ndarray::Array2::from_shape_vec((r, c), self.data).expect("shape checked at construction"))
    }
}

impl From<&ndarray::Array2<f64>> for Tensor {
    fn from(m: &ndarray::Array2<f64>) -> Self {
        Tensor {
            shape: m.shape().to_vec(),
            data: m.iter().copied().collect(),
        }
    }
}
