//! Adam and the learning-rate schedule.

use hfedit_tensor::Parameter;

use crate::config::TrainConfig;
use crate::error::{invalid, Error, Result};
use crate::nn::Module;

pub const ADAM_EPS: f64 = 1e-8;

/// Bias-corrected Adam. Moments are kept per parameter in visiting order
/// and created lazily on the first step.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Number of completed steps.
    pub t: u64,
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(beta1: f64, beta2: f64) -> Self {
        Self {
            beta1,
            beta2,
            eps: ADAM_EPS,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// One update of every parameter of `module` from its accumulated
    /// gradient. A parameter without a gradient counts as zero gradient.
    /// If any gradient is non-finite nothing changes and an error names the
    /// parameter.
    pub fn step<M: Module + ?Sized>(&mut self, module: &mut M, lr: f64) -> Result<()> {
        let mut grads: Vec<Option<Vec<f32>>> = Vec::new();
        let mut sizes = Vec::new();
        let mut bad: Option<String> = None;
        module.visit(&mut |p: &Parameter| {
            let g = p.grad().map(|g| g.to_vec());
            if bad.is_none() && g.as_ref().is_some_and(|g| g.iter().any(|v| !v.is_finite())) {
                bad = Some(p.name().to_string());
            }
            sizes.push(p.numel());
            grads.push(g);
        });
        if let Some(name) = bad {
            return Err(Error::NonFinite(format!("gradient of {name}; step skipped")));
        }
        if self.m.is_empty() {
            self.m = sizes.iter().map(|&n| vec![0.0; n]).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != sizes.len() || self.m.iter().zip(&sizes).any(|(m, &n)| m.len() != n) {
            return Err(invalid("optimizer state", "does not match the parameter set"));
        }
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        let mut k = 0;
        let mut result = Ok(());
        module.visit_mut(&mut |p: &mut Parameter| {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            let grad = grads[k].take();
            k += 1;
            let mut data = p.tensor().to_vec();
            for i in 0..data.len() {
                let g = grad.as_ref().map_or(0.0, |g| g[i] as f64);
                let mi = b1 * m[i] as f64 + (1.0 - b1) * g;
                let vi = b2 * v[i] as f64 + (1.0 - b2) * g * g;
                m[i] = mi as f32;
                v[i] = vi as f32;
                let update = lr * (mi / c1) / ((vi / c2).sqrt() + self.eps);
                data[i] = (data[i] as f64 - update) as f32;
            }
            if let Err(e) = p.set_data(data) {
                result = Err(e.into());
            }
        });
        result
    }
}

/// Learning rate for a 1-based epoch: constant before `decay_start_epoch`,
/// then linear towards zero at `epochs + 1`.
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> f64 {
    let lr = cfg.lr as f64;
    if epoch < cfg.decay_start_epoch {
        return lr;
    }
    let span = (cfg.epochs + 1 - cfg.decay_start_epoch) as f64;
    lr * (cfg.epochs + 1).saturating_sub(epoch) as f64 / span
}
