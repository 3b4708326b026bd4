//! Minimal differentiable kernels for the deconvolution network: dense and
//! transposed-convolution layers with explicit backward passes, the fused
//! sigmoid cross-entropy loss, Adam, and finite-difference gradient
//! verification. There is no autodiff graph; every layer exposes exact
//! analytic gradients directly.

mod adam;
mod gradcheck;
mod layers;
mod loss;

pub use adam::{AdamHyper, AdamState};
pub use gradcheck::gradient_check;
pub use layers::{
    Deconv2dParams, DenseParams, LayerParams, ParamGrads, deconv2d, deconv2d_backward, dense,
    dense_backward,
};
pub use loss::sigmoid_bce;
pub(crate) use layers::init_rng;
pub(crate) use loss::sigmoid;

use crate::error::{Error, Result};

/// A dense row-major array of up to four dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: &[usize], values: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.len() > 4 {
            return Err(Error::invalid(format!("tensor rank {} not in 1..=4", shape.len())));
        }
        let count: usize = shape.iter().product();
        if count != values.len() {
            return Err(Error::invalid(format!(
                "shape {shape:?} holds {count} values, got {}",
                values.len()
            )));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite tensor value {bad}")));
        }
        Ok(Self { shape: shape.to_vec(), values })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::new(shape, vec![0.0; shape.iter().product()])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Reinterprets the same values under a new shape of equal size.
    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        Self::new(shape, self.values.clone())
    }
}

/// Element-wise rectified linear unit. NaN propagates instead of clamping
/// to zero, so numerical blowups surface at the loss check rather than
/// being silently masked.
pub fn relu(input: &Tensor) -> Tensor {
    let values =
        input.values.iter().map(|&v| if v > 0.0 || v.is_nan() { v } else { 0.0 }).collect();
    Tensor { shape: input.shape.clone(), values }
}

/// Backward pass of [`relu`], gated on the forward *output* (the gradient
/// at exactly zero is taken as zero).
pub fn relu_backward(output: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    if output.shape != grad_out.shape {
        return Err(Error::invalid("relu gradient shape does not match activation shape"));
    }
    let values = output
        .values
        .iter()
        .zip(&grad_out.values)
        .map(|(&o, &g)| if o > 0.0 { g } else { 0.0 })
        .collect();
    Ok(Tensor { shape: output.shape.clone(), values })
}
