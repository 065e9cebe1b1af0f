use crate::elem::DType;
use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

/// A named trainable tensor.
///
/// Updates swap in a fresh leaf rather than mutating data in place, so graphs
/// built from the previous value stay valid.
#[derive(Clone, Debug)]
pub struct Parameter {
    name: String,
    value: Tensor,
}

impl Parameter {
    pub fn new(name: impl Into<String>, init: Tensor) -> Self {
        Parameter {
            name: name.into(),
            value: init.into_leaf(),
        }
    }

    /// A parameter whose value is `value` itself rather than a fresh leaf,
    /// so gradients reach whatever graph `value` belongs to.
    pub fn bound(name: impl Into<String>, value: Tensor) -> Self {
        Parameter {
            name: name.into(),
            value,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn tensor(&self) -> &Tensor {
        &self.value
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn numel(&self) -> usize {
        self.value.numel()
    }

    pub fn grad(&self) -> Option<Tensor> {
        self.value.grad()
    }

    pub fn zero_grad(&self) {
        self.value.zero_grad();
    }

    /// Replaces the value, keeping the shape. The gradient accumulator starts
    /// again from zero.
    pub fn set_data(&mut self, data: Vec<f32>) -> Result<()> {
        if data.len() != self.numel() {
            return Err(TensorError::BadElementCount {
                op: "Parameter::set_data",
                got: data.len(),
                shape: self.shape().to_vec(),
            });
        }
        self.value = Tensor::leaf(data, self.value.shape())?;
        Ok(())
    }

    /// A copy that is a constant: usable in graphs but never receives
    /// gradient.
    pub fn frozen(&self) -> Parameter {
        Parameter {
            name: self.name.clone(),
            value: self.value.detach(),
        }
    }

    pub fn is_frozen(&self) -> bool {
        !self.value.requires_grad()
    }

    /// A trainable copy with the given element type.
    pub fn cast(&self, dtype: DType) -> Parameter {
        Parameter {
            name: self.name.clone(),
            value: self.value.to_dtype(dtype).into_leaf(),
        }
    }
}
