use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: shape mismatch, {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("{op}: element count {got} does not match shape {shape:?}")]
    BadElementCount {
        op: &'static str,
        got: usize,
        shape: Vec<usize>,
    },

    #[error("{op}: invalid argument, {detail}")]
    InvalidArgument { op: &'static str, detail: String },

    #[error("{op}: element types differ ({left:?} vs {right:?})")]
    DTypeMismatch {
        op: &'static str,
        left: crate::elem::DType,
        right: crate::elem::DType,
    },

    #[error("{op}: empty tensor")]
    Empty { op: &'static str },

    #[error("backward: root must be a scalar, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),

    #[error("grad: {0}")]
    NotDifferentiable(String),
}

pub type Result<T> = std::result::Result<T, TensorError>;

pub(crate) fn shape_err(op: &'static str, detail: impl Into<String>) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        detail: detail.into(),
    }
}

pub(crate) fn arg_err(op: &'static str, detail: impl Into<String>) -> TensorError {
    TensorError::InvalidArgument {
        op,
        detail: detail.into(),
    }
}
