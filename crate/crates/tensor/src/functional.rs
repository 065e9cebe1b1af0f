//! Reductions and norms used by the training objectives.

use crate::error::{shape_err, Result, TensorError};
use crate::tensor::Tensor;

pub fn mean(x: &Tensor) -> Result<Tensor> {
    x.mean_all()
}

/// Mean absolute difference over all elements.
pub fn l1_mean(x: &Tensor, y: &Tensor) -> Result<Tensor> {
    same_shape("l1_mean", x, y)?;
    x.sub(y)?.abs().mean_all()
}

/// Mean squared difference over all elements.
pub fn mse_mean(x: &Tensor, y: &Tensor) -> Result<Tensor> {
    same_shape("mse_mean", x, y)?;
    x.sub(y)?.square().mean_all()
}

/// Euclidean norm of each sample (leading axis), as an `[n]` vector.
///
/// `floor` is added under the square root so the norm stays differentiable
/// at zero.
pub fn l2_norm_per_sample(x: &Tensor, floor: f32) -> Result<Tensor> {
    if x.numel() == 0 || x.rank() == 0 {
        return Err(TensorError::Empty {
            op: "l2_norm_per_sample",
        });
    }
    let n = x.dim(0);
    let flat = x.reshape(&[n, x.numel() / n])?;
    flat.square().sum_to(&[n, 1])?.shift(floor).sqrt().reshape(&[n])
}

fn same_shape(op: &'static str, x: &Tensor, y: &Tensor) -> Result<()> {
    if x.shape() != y.shape() {
        return Err(shape_err(op, format!("{:?} vs {:?}", x.shape(), y.shape())));
    }
    if x.numel() == 0 {
        return Err(TensorError::Empty { op });
    }
    Ok(())
}
