#![allow(dead_code)]

pub mod loss_case;

use hfedit_core::nn::Module;
use hfedit_tensor::{DType, Parameter, Tensor, TensorError};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(shape: &[usize], lo: f32, hi: f32, seed: u64) -> Tensor {
    Tensor::rand_uniform(shape, lo, hi, &mut rng(seed))
}

/// Gradient-check closures speak the tensor crate's error type.
pub fn te<T>(r: hfedit_core::Result<T>) -> hfedit_tensor::Result<T> {
    r.map_err(|e| match e {
        hfedit_core::Error::Tensor(t) => t,
        other => TensorError::NotDifferentiable(format!("{other}")),
    })
}

/// Copy of `m` in `value`'s dtype with the parameter `name` replaced by
/// `value` itself, so gradients reach `value`.
pub fn substitute<M: Module + Clone>(m: &M, name: &str, value: &Tensor) -> M {
    let mut out = if value.dtype() == DType::F64 {
        m.cast(DType::F64)
    } else {
        m.clone()
    };
    let mut found = false;
    out.visit_mut(&mut |p| {
        if p.name() == name {
            *p = Parameter::bound(name, value.clone());
            found = true;
        }
    });
    assert!(found, "no parameter named {name}");
    out
}

pub fn param<M: Module>(m: &M, name: &str) -> Tensor {
    let mut found = None;
    m.visit(&mut |p| {
        if p.name() == name {
            found = Some(p.tensor().clone());
        }
    });
    found.unwrap_or_else(|| panic!("no parameter named {name}"))
}

pub fn max_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.to_f64_vec()
        .iter()
        .zip(b.to_f64_vec())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}
