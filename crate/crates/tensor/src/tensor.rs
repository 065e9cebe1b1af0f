use std::cell::Cell;
use std::fmt;
use std::sync::{Arc, Mutex};

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::autograd::Op;
use crate::elem::{DType, Storage};
use crate::error::{Result, TensorError};
use crate::shape::numel;

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Runs `f` with graph recording disabled on this thread.
pub fn no_grad<T>(f: impl FnOnce() -> T) -> T {
    with_grad_mode(false, f)
}

pub(crate) fn with_grad_mode<T>(enabled: bool, f: impl FnOnce() -> T) -> T {
    struct Restore(bool);
    impl Drop for Restore {
        fn drop(&mut self) {
            GRAD_ENABLED.with(|g| g.set(self.0));
        }
    }
    let prev = GRAD_ENABLED.with(|g| g.replace(enabled));
    let _restore = Restore(prev);
    f()
}

pub fn is_grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

pub(crate) enum Origin {
    Constant,
    Leaf { grad: Mutex<Option<Storage>> },
    Op { op: Op, inputs: Vec<Tensor> },
}

pub(crate) struct Node {
    pub(crate) shape: Vec<usize>,
    pub(crate) data: Arc<Storage>,
    pub(crate) origin: Origin,
}

/// A dense row-major array that optionally participates in differentiation.
///
/// Elements are `f32` unless the tensor was built from `f64` data or cast
/// with [`Tensor::to_dtype`]; operands of one op must share a dtype.
///
/// Cloning is cheap (reference counted); element data is immutable once
/// created. Leaves created with `requires_grad` carry a gradient
/// accumulator, filled by [`Tensor::backward`].
#[derive(Clone)]
pub struct Tensor(pub(crate) Arc<Node>);

/// Identity of a tensor node, stable while the node is alive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TensorId(usize);

impl Tensor {
    pub(crate) fn build(shape: Vec<usize>, data: Arc<Storage>, origin: Origin) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        Tensor(Arc::new(Node { shape, data, origin }))
    }

    pub fn from_vec(data: Vec<f32>, shape: &[usize]) -> Result<Self> {
        if numel(shape) != data.len() {
            return Err(TensorError::BadElementCount {
                op: "from_vec",
                got: data.len(),
                shape: shape.to_vec(),
            });
        }
        Ok(Self::build(
            shape.to_vec(),
            Arc::new(Storage::F32(data)),
            Origin::Constant,
        ))
    }

    pub fn from_vec_f64(data: Vec<f64>, shape: &[usize]) -> Result<Self> {
        if numel(shape) != data.len() {
            return Err(TensorError::BadElementCount {
                op: "from_vec_f64",
                got: data.len(),
                shape: shape.to_vec(),
            });
        }
        Ok(Self::build(
            shape.to_vec(),
            Arc::new(Storage::F64(data)),
            Origin::Constant,
        ))
    }

    pub(crate) fn from_storage(data: Storage, shape: &[usize]) -> Self {
        Self::build(shape.to_vec(), Arc::new(data), Origin::Constant)
    }

    /// A trainable leaf with a zeroed gradient accumulator.
    pub fn leaf(data: Vec<f32>, shape: &[usize]) -> Result<Self> {
        let t = Self::from_vec(data, shape)?;
        Ok(t.into_leaf())
    }

    /// Re-wraps this tensor's data as a fresh trainable leaf (the data buffer
    /// is shared, not copied).
    pub fn into_leaf(&self) -> Self {
        Self::build(
            self.0.shape.clone(),
            self.0.data.clone(),
            Origin::Leaf {
                grad: Mutex::new(Some(Storage::zeros(self.dtype(), self.numel()))),
            },
        )
    }

    pub fn scalar(v: f32) -> Self {
        Self::from_storage(Storage::F32(vec![v]), &[])
    }

    pub fn full(shape: &[usize], v: f32) -> Self {
        Self::from_storage(Storage::F32(vec![v; numel(shape)]), shape)
    }

    /// Constant with this tensor's shape and dtype.
    pub fn full_like(&self, v: f64) -> Self {
        Self::from_storage(Storage::full(self.dtype(), self.numel(), v), self.shape())
    }

    pub fn zeros_like(&self) -> Self {
        self.full_like(0.0)
    }

    pub fn ones_like(&self) -> Self {
        self.full_like(1.0)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn randn<R: Rng + ?Sized>(shape: &[usize], mean: f32, std: f32, rng: &mut R) -> Self {
        let dist = Normal::new(mean, std).expect("std must be finite and non-negative");
        let data = (0..numel(shape)).map(|_| dist.sample(rng)).collect();
        Self::from_storage(Storage::F32(data), shape)
    }

    pub fn rand_uniform<R: Rng + ?Sized>(shape: &[usize], lo: f32, hi: f32, rng: &mut R) -> Self {
        let dist = Uniform::new_inclusive(lo, hi);
        let data = (0..numel(shape)).map(|_| dist.sample(rng)).collect();
        Self::from_storage(Storage::F32(data), shape)
    }

    pub(crate) fn from_op(op: Op, inputs: Vec<Tensor>, shape: Vec<usize>, data: Storage) -> Self {
        let track = is_grad_enabled() && inputs.iter().any(Tensor::requires_grad);
        let origin = if track {
            Origin::Op { op, inputs }
        } else {
            Origin::Constant
        };
        Self::build(shape, Arc::new(data), origin)
    }

    pub fn id(&self) -> TensorId {
        TensorId(Arc::as_ptr(&self.0) as usize)
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn rank(&self) -> usize {
        self.0.shape.len()
    }

    pub fn dim(&self, i: usize) -> usize {
        self.0.shape[i]
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn dtype(&self) -> DType {
        self.0.data.dtype()
    }

    /// Elements of an `f32` tensor.
    ///
    /// # Panics
    /// If the tensor holds `f64` data.
    pub fn data(&self) -> &[f32] {
        match self.0.data.as_ref() {
            Storage::F32(v) => v,
            Storage::F64(_) => panic!("data() on an f64 tensor; use to_f64_vec()"),
        }
    }

    /// Elements of an `f64` tensor.
    ///
    /// # Panics
    /// If the tensor holds `f32` data.
    pub fn data_f64(&self) -> &[f64] {
        match self.0.data.as_ref() {
            Storage::F64(v) => v,
            Storage::F32(_) => panic!("data_f64() on an f32 tensor; use to_f64_vec()"),
        }
    }

    pub(crate) fn storage(&self) -> &Storage {
        &self.0.data
    }

    pub fn to_vec(&self) -> Vec<f32> {
        match self.0.data.as_ref() {
            Storage::F32(v) => v.clone(),
            Storage::F64(v) => v.iter().map(|&x| x as f32).collect(),
        }
    }

    /// Elements widened (or kept) as `f64`, whatever the dtype.
    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.0.data.to_f64_vec()
    }

    /// Constant copy with the given element type.
    pub fn to_dtype(&self, dtype: DType) -> Tensor {
        if dtype == self.dtype() {
            return self.detach();
        }
        Self::from_storage(self.0.data.cast(dtype), self.shape())
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f32 {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape());
        self.to_f64_vec()[0] as f32
    }

    pub fn requires_grad(&self) -> bool {
        !matches!(self.0.origin, Origin::Constant)
    }

    pub fn is_leaf(&self) -> bool {
        !matches!(self.0.origin, Origin::Op { .. })
    }

    /// Same data, cut from any graph.
    pub fn detach(&self) -> Self {
        Self::build(self.0.shape.clone(), self.0.data.clone(), Origin::Constant)
    }

    /// Accumulated gradient of a trainable leaf.
    pub fn grad(&self) -> Option<Tensor> {
        match &self.0.origin {
            Origin::Leaf { grad } => {
                let g = grad.lock().expect("grad lock poisoned");
                g.as_ref().map(|v| Self::from_storage(v.clone(), self.shape()))
            }
            _ => None,
        }
    }

    pub fn zero_grad(&self) {
        if let Origin::Leaf { grad } = &self.0.origin {
            let mut g = grad.lock().expect("grad lock poisoned");
            if let Some(v) = g.as_mut() {
                *v = Storage::zeros(v.dtype(), v.len());
            }
        }
    }

    pub(crate) fn accumulate_grad(&self, delta: &Tensor) {
        if let Origin::Leaf { grad } = &self.0.origin {
            let mut g = grad.lock().expect("grad lock poisoned");
            let acc = g.get_or_insert_with(|| Storage::zeros(delta.dtype(), delta.numel()));
            match (acc, delta.storage()) {
                (Storage::F32(a), Storage::F32(d)) => a.iter_mut().zip(d).for_each(|(a, d)| *a += d),
                (Storage::F64(a), Storage::F64(d)) => a.iter_mut().zip(d).for_each(|(a, d)| *a += d),
                (acc, d) => {
                    let sum: Vec<f64> = acc
                        .to_f64_vec()
                        .iter()
                        .zip(d.to_f64_vec())
                        .map(|(a, d)| a + d)
                        .collect();
                    *acc = Storage::F64(sum).cast(acc.dtype());
                }
            }
        }
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match &self.0.origin {
            Origin::Constant => "const",
            Origin::Leaf { .. } => "leaf",
            Origin::Op { op, .. } => op.name(),
        };
        let preview: Vec<f64> = self.to_f64_vec().into_iter().take(6).collect();
        write!(
            f,
            "Tensor({:?}, {:?}, {kind}, {preview:?}",
            self.shape(),
            self.dtype()
        )?;
        if self.numel() > 6 {
            write!(f, "...")?;
        }
        write!(f, ")")
    }
}
