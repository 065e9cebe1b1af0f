//! A two-sample batch of 2x2 single-channel images with linear critics and
//! an affine editor, plus a plain-f64 evaluation of every loss term.

use hfedit_core::networks::{DetailCritic, ImageCritic, ImageEditor};
use hfedit_core::LossWeights;
use hfedit_tensor::Tensor;

pub const N: usize = 2;
pub const PIX: usize = 4;

/// Score `<w, x>` per sample; AUs `c * mean(x) + b`.
#[derive(Clone)]
pub struct LinearCritic {
    pub w: Vec<f32>,
    pub c: Vec<f32>,
    pub b: Vec<f32>,
}

impl ImageCritic for LinearCritic {
    fn critique(&self, x: &Tensor) -> hfedit_core::Result<(Tensor, Tensor)> {
        let n = x.dim(0);
        let dt = x.dtype();
        let w = Tensor::from_vec(self.w.clone(), &[1, 1, 2, 2])?.to_dtype(dt);
        let score = x.mul(&w)?.sum_to(&[n, 1, 1, 1])?;
        let m = x
            .sum_to(&[n, 1, 1, 1])?
            .scale(1.0 / PIX as f32)
            .reshape(&[n, 1])?;
        let k = self.c.len();
        let c = Tensor::from_vec(self.c.clone(), &[1, k])?.to_dtype(dt);
        let b = Tensor::from_vec(self.b.clone(), &[1, k])?.to_dtype(dt);
        Ok((score, m.mul(&c)?.add(&b)?))
    }

    fn detached(&self) -> Self {
        self.clone()
    }
}

#[derive(Clone)]
pub struct LinearDetail {
    pub v: Vec<f32>,
}

impl DetailCritic for LinearDetail {
    fn score(&self, x_h: &Tensor) -> hfedit_core::Result<Tensor> {
        let v = Tensor::from_vec(self.v.clone(), &[1, 1, 2, 2])?.to_dtype(x_h.dtype());
        Ok(x_h.mul(&v)?.sum_to(&[x_h.dim(0), 1, 1, 1])?)
    }

    fn detached(&self) -> Self {
        self.clone()
    }
}

/// `G(x, u) = x * (1 + beta * s) + alpha * s + gamma` with `s = sum(u)`.
pub struct AffineEditor {
    pub alpha: f32,
    pub beta: f32,
    pub gamma: f32,
}

impl ImageEditor for AffineEditor {
    fn edit(&self, x: &Tensor, u: &Tensor) -> hfedit_core::Result<Tensor> {
        let n = x.dim(0);
        let s = u.sum_to(&[n, 1])?.reshape(&[n, 1, 1, 1])?;
        Ok(x.mul(&s.scale(self.beta).shift(1.0))?
            .add(&s.scale(self.alpha).shift(self.gamma))?)
    }
}

pub struct Case {
    pub x: [[f64; PIX]; N],
    pub ux: [[f64; 2]; N],
    pub uy: [[f64; 2]; N],
    pub w: [f64; PIX],
    pub v: [f64; PIX],
    pub c: [f64; 2],
    pub b: [f64; 2],
    pub g: (f64, f64, f64),
    pub weights: LossWeights,
}

pub fn case() -> Case {
    Case {
        x: [[0.2, -0.4, 0.6, 0.1], [-0.3, 0.5, 0.0, -0.8]],
        ux: [[0.1, 0.7], [0.9, 0.4]],
        uy: [[0.6, 0.2], [0.3, 1.0]],
        w: [0.5, -0.25, 0.75, 0.3],
        v: [-0.4, 0.9, 0.2, -0.6],
        c: [1.5, -0.5],
        b: [0.2, 0.1],
        g: (0.3, -0.2, 0.05),
        weights: LossWeights {
            lambda_gp: 10.0,
            lambda1: 150.0,
            lambda2: 150.0,
            lambda3: 30.0,
        },
    }
}

pub fn tensors(k: &Case) -> (Tensor, Tensor, Tensor, LinearCritic, LinearDetail, AffineEditor) {
    let f = |v: &[f64]| v.iter().map(|&a| a as f32).collect::<Vec<f32>>();
    let x = Tensor::from_vec(k.x.iter().flat_map(|r| f(r)).collect(), &[N, 1, 2, 2]).unwrap();
    let ux = Tensor::from_vec(k.ux.iter().flat_map(|r| f(r)).collect(), &[N, 2]).unwrap();
    let uy = Tensor::from_vec(k.uy.iter().flat_map(|r| f(r)).collect(), &[N, 2]).unwrap();
    let di = LinearCritic {
        w: f(&k.w),
        c: f(&k.c),
        b: f(&k.b),
    };
    let dh = LinearDetail { v: f(&k.v) };
    let g = AffineEditor {
        alpha: k.g.0 as f32,
        beta: k.g.1 as f32,
        gamma: k.g.2 as f32,
    };
    (x, ux, uy, di, dh, g)
}

// Reference evaluation, written out in f64 with plain arrays.

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| p * q).sum()
}

pub fn high_pass(x: &[f64; PIX]) -> [f64; PIX] {
    let m = x.iter().sum::<f64>() / 4.0;
    x.map(|v| v - m)
}

pub fn penalty(w: &[f64]) -> f64 {
    ((dot(w, w) + 1e-12).sqrt() - 1.0).powi(2)
}

pub fn au_pred(k: &Case, x: &[f64; PIX]) -> [f64; 2] {
    let m = x.iter().sum::<f64>() / PIX as f64;
    [k.c[0] * m + k.b[0], k.c[1] * m + k.b[1]]
}

pub fn sq_err(a: &[f64; 2], b: &[f64; 2]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

pub fn edit(k: &Case, x: &[f64; PIX], s: f64) -> [f64; PIX] {
    let (alpha, beta, gamma) = k.g;
    x.map(|v| v * (1.0 + beta * s) + alpha * s + gamma)
}

pub fn rel_sum(k: &Case, i: usize) -> f64 {
    (k.uy[i][0] - k.ux[i][0]) + (k.uy[i][1] - k.ux[i][1])
}

pub fn reference_d(k: &Case, x_prime: &[[f64; PIX]; N]) -> (f64, f64, f64) {
    let lw = &k.weights;
    let mean = |f: &dyn Fn(usize) -> f64| (0..N).map(f).sum::<f64>() / N as f64;
    let adv = mean(&|i| dot(&k.w, &x_prime[i])) - mean(&|i| dot(&k.w, &k.x[i]))
        + lw.lambda_gp as f64 * penalty(&k.w);
    let hf = mean(&|i| dot(&k.v, &high_pass(&x_prime[i]))) - mean(&|i| dot(&k.v, &high_pass(&k.x[i])))
        + lw.lambda_gp as f64 * penalty(&k.v);
    let cond = (0..N)
        .map(|i| sq_err(&au_pred(k, &k.x[i]), &k.ux[i]))
        .sum::<f64>()
        / N as f64;
    (adv, hf, cond)
}

pub struct RefG {
    pub adv: f64,
    pub hf: f64,
    pub cond: f64,
    pub rec_self: f64,
    pub rec_cycle: f64,
}

pub fn reference_g(k: &Case) -> RefG {
    let mut r = RefG {
        adv: 0.0,
        hf: 0.0,
        cond: 0.0,
        rec_self: 0.0,
        rec_cycle: 0.0,
    };
    for i in 0..N {
        let s = rel_sum(k, i);
        let xp = edit(k, &k.x[i], s);
        let xs = edit(k, &k.x[i], 0.0);
        let xh = edit(k, &xp, -s);
        r.adv -= dot(&k.w, &xp) / N as f64;
        r.hf -= dot(&k.v, &high_pass(&xp)) / N as f64;
        r.cond += sq_err(&au_pred(k, &xp), &k.uy[i]) / N as f64;
        for p in 0..PIX {
            r.rec_self += (k.x[i][p] - xs[p]).abs() / (N * PIX) as f64;
            r.rec_cycle += (k.x[i][p] - xh[p]).abs() / (N * PIX) as f64;
        }
    }
    r
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1.0)
}
