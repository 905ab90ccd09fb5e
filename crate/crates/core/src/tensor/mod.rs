//! Dense tensor arithmetic with reverse-mode differentiation.
//!
//! Everything is 64-bit floats in row-major order. The op set is small and
//! fixed; every network in this crate composes from it, which keeps the
//! whole autodiff surface gradient-checked.

mod adam;
mod graph;
pub(crate) mod kernels;
mod params;
mod weights;

pub use adam::{adam_update, Adam, AdamConfig};
pub use graph::{Graph, NodeId, Op};
pub use params::{init_conv_weight, ParamNodes, ParamStore};
pub use weights::{load_model, save_model, ModelFile};

use crate::error::{Error, Result};

/// Dense N-dimensional array of f64 in row-major order, with an optional
/// gradient of the same shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    pub requires_grad: bool,
    pub grad: Option<Vec<f64>>,
}

impl Tensor {
    /// Build a tensor from raw data, checking length and finiteness.
    pub fn from_vec(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::dim(format!(
                "shape {:?} expects {} elements, got {}",
                shape,
                n,
                data.len()
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("tensor data".into()));
        }
        Ok(Tensor {
            shape,
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; n],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn full(shape: Vec<usize>, value: f64) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape,
            data: vec![value; n],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
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

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Scalar tensors are how losses are represented: exactly one element.
    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    pub fn item(&self) -> Result<f64> {
        if self.is_scalar() {
            Ok(self.data[0])
        } else {
            Err(Error::contract(format!(
                "item() on tensor of shape {:?}",
                self.shape
            )))
        }
    }

    /// Expected shape for a C,H,W view; errors unless rank is 3.
    pub fn dims3(&self) -> Result<(usize, usize, usize)> {
        if self.shape.len() == 3 {
            Ok((self.shape[0], self.shape[1], self.shape[2]))
        } else {
            Err(Error::dim(format!("expected rank 3, got {:?}", self.shape)))
        }
    }

    pub fn validate_finite(&self, what: &str) -> Result<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite(what.to_string()))
        }
    }

    pub fn requires_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }
}

pub(crate) fn all_finite(data: &[f64]) -> bool {
    data.iter().all(|v| v.is_finite())
}
