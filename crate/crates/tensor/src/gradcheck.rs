//! Central finite-difference checking of backward gradients.
//!
//! The checked function may return a tensor of any shape; it is contracted
//! with fixed pseudo-random weights. Analytic gradients come from the `f32`
//! graph. The difference quotients re-run the function on `f64` copies of the
//! inputs, so the function must build any constants it uses in the dtype of
//! its arguments (see [`Tensor::to_dtype`]).

use rand::seq::index::sample;
use rand::SeedableRng;

use crate::autograd::grad;
use crate::elem::DType;
use crate::error::Result;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct GradCheck {
    /// Central-difference step.
    pub eps: f64,
    /// Coordinates sampled per input (all of them when the input is smaller).
    pub samples_per_input: usize,
    pub seed: u64,
    /// Gradients smaller than this fraction of the mean sampled magnitude are
    /// compared against that floor instead of their own size.
    pub relative_floor: f64,
}

impl Default for GradCheck {
    fn default() -> Self {
        GradCheck {
            eps: 1e-3,
            samples_per_input: 100,
            seed: 0x5eed,
            relative_floor: 1e-2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mismatch {
    pub input: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub coords: usize,
    pub max_rel_err: f64,
    pub worst: Option<Mismatch>,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err <= tol
    }
}

impl GradCheck {
    pub fn with_samples(mut self, n: usize) -> Self {
        self.samples_per_input = n;
        self
    }

    pub fn with_eps(mut self, eps: f64) -> Self {
        self.eps = eps;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Compares backward gradients of `f` at `inputs` against central
    /// differences.
    pub fn run<F>(&self, inputs: &[Tensor], f: F) -> Result<GradCheckReport>
    where
        F: Fn(&[Tensor]) -> Result<Tensor>,
    {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(self.seed);
        let leaves: Vec<Tensor> = inputs.iter().map(Tensor::into_leaf).collect();
        let out = f(&leaves)?;
        let weights = Tensor::rand_uniform(out.shape(), -1.0, 1.0, &mut rng);
        let w64: Vec<f64> = weights.data().iter().map(|&v| v as f64).collect();
        let loss = out.mul(&weights)?.sum_all();
        let refs: Vec<&Tensor> = leaves.iter().collect();
        let analytic = grad(&loss, &refs, false)?;

        let contract = |ts: &[Tensor]| -> Result<f64> {
            let y = f(ts)?;
            Ok(y.to_f64_vec().iter().zip(&w64).map(|(&a, &b)| a * b).sum())
        };

        let wide: Vec<Tensor> = inputs.iter().map(|t| t.to_dtype(DType::F64)).collect();
        let mut pairs = Vec::new();
        for (i, x) in wide.iter().enumerate() {
            let n = x.numel();
            let picks: Vec<usize> = if n <= self.samples_per_input {
                (0..n).collect()
            } else {
                let mut v = sample(&mut rng, n, self.samples_per_input).into_vec();
                v.sort_unstable();
                v
            };
            for idx in picks {
                let base = x.data_f64()[idx];
                let with = |v: f64| -> Result<Vec<Tensor>> {
                    let mut data = x.to_f64_vec();
                    data[idx] = v;
                    let mut ts: Vec<Tensor> = wide.clone();
                    ts[i] = Tensor::from_vec_f64(data, x.shape())?;
                    Ok(ts)
                };
                let fp = contract(&with(base + self.eps)?)?;
                let fm = contract(&with(base - self.eps)?)?;
                let numeric = (fp - fm) / (2.0 * self.eps);
                let a = analytic[i].to_f64_vec()[idx];
                pairs.push((i, idx, a, numeric));
            }
        }

        let scale = pairs.iter().map(|p| p.3.abs()).sum::<f64>() / pairs.len().max(1) as f64;
        let floor = (self.relative_floor * scale).max(1e-12);
        let mut report = GradCheckReport {
            coords: pairs.len(),
            max_rel_err: 0.0,
            worst: None,
        };
        for (input, index, a, n) in pairs {
            let rel = (a - n).abs() / a.abs().max(n.abs()).max(floor);
            if rel > report.max_rel_err || report.worst.is_none() {
                report.max_rel_err = report.max_rel_err.max(rel);
                report.worst = Some(Mismatch {
                    input,
                    index,
                    analytic: a,
                    numeric: n,
                    rel_err: rel,
                });
            }
        }
        Ok(report)
    }
}
