//! Critic and generator objectives: WGAN-GP in image space and in
//! high-frequency space, AU regression, self and cycle reconstruction.

use hfedit_tensor::functional::{l1_mean, l2_norm_per_sample};
use hfedit_tensor::{grad, no_grad, Tensor};
use rand::Rng;

use crate::config::LossWeights;
use crate::error::{invalid, Result};
use crate::networks::{DetailCritic, ImageCritic, ImageEditor};
use crate::wavelet::high_pass_reconstruct;

/// Added under the square root of the penalty's gradient norm.
pub const GP_NORM_FLOOR: f32 = 1e-12;

/// Per-sample interpolation weights for the two penalties.
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyDraws {
    pub image: Vec<f32>,
    pub detail: Vec<f32>,
}

impl PenaltyDraws {
    pub fn sample<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        let mut draw = || (0..n).map(|_| rng.gen_range(0.0..=1.0)).collect();
        PenaltyDraws {
            image: draw(),
            detail: draw(),
        }
    }
}

/// `b + eps * (a - b)` with one `eps` per sample.
pub fn interpolate(a: &Tensor, b: &Tensor, eps: &[f32]) -> Result<Tensor> {
    if a.shape() != b.shape() || a.rank() == 0 {
        return Err(invalid(
            "interpolation endpoints",
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    let n = a.dim(0);
    if eps.len() != n {
        return Err(invalid(
            "interpolation weights",
            format!("{} draws for batch {n}", eps.len()),
        ));
    }
    if eps.iter().any(|e| !(0.0..=1.0).contains(e)) {
        return Err(invalid("interpolation weights", "draws must lie in [0, 1]"));
    }
    let mut shape = vec![1; a.rank()];
    shape[0] = n;
    let e = Tensor::from_vec(eps.to_vec(), &shape)?.to_dtype(a.dtype());
    Ok(b.add(&a.sub(b)?.mul(&e)?)?)
}

/// Mean over the batch of `(‖∇ critic(x̃)‖₂ − 1)²`, the gradient taken of the
/// summed score map at `x̃ = eps·a + (1 − eps)·b`. The result is
/// differentiable with respect to the critic's parameters.
pub fn gradient_penalty<F>(critic: F, a: &Tensor, b: &Tensor, eps: &[f32]) -> Result<Tensor>
where
    F: Fn(&Tensor) -> Result<Tensor>,
{
    let x = interpolate(a, b, eps)?.detach().into_leaf();
    let score = critic(&x)?.sum_all();
    let g = grad(&score, &[&x], true)?.remove(0);
    let norm = l2_norm_per_sample(&g, GP_NORM_FLOOR)?;
    Ok(norm.shift(-1.0).square().mean_all()?)
}

/// Mean over the batch of the squared L2 distance between AU vectors.
pub fn au_regression(pred: &Tensor, target: &Tensor) -> Result<Tensor> {
    if pred.shape() != target.shape() || pred.rank() != 2 {
        return Err(invalid(
            "AU batch",
            format!("prediction {:?} vs target {:?}", pred.shape(), target.shape()),
        ));
    }
    let n = pred.dim(0);
    Ok(pred.sub(target)?.square().sum_all().scale(1.0 / n as f32))
}

fn batch_match(what: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.rank() == 0 || b.rank() == 0 || a.dim(0) != b.dim(0) {
        return Err(invalid(
            what,
            format!("batch sizes differ: {:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct DLosses {
    /// `d_adv + d_hf + λ₁·d_cond`, ready for backward.
    pub total: Tensor,
    pub d_adv: f64,
    pub d_hf: f64,
    pub d_cond: f64,
}

/// Critic objective. `x_prime` is detached, so no gradient reaches the
/// generator. Without a detail critic `d_hf` is zero.
pub fn d_losses<DI: ImageCritic, DH: DetailCritic>(
    d_i: &DI,
    d_h: Option<&DH>,
    x: &Tensor,
    x_prime: &Tensor,
    u_x: &Tensor,
    w: &LossWeights,
    draws: &PenaltyDraws,
) -> Result<DLosses> {
    batch_match("real/fake batches", x, x_prime)?;
    batch_match("real batch and AU labels", x, u_x)?;
    if x.shape() != x_prime.shape() {
        return Err(invalid(
            "fake batch",
            format!("{:?} vs real {:?}", x_prime.shape(), x.shape()),
        ));
    }
    let x_prime = x_prime.detach();

    let (real_score, real_au) = d_i.critique(x)?;
    let (fake_score, _) = d_i.critique(&x_prime)?;
    let gp = gradient_penalty(|t| Ok(d_i.critique(t)?.0), x, &x_prime, &draws.image)?;
    let adv = fake_score
        .mean_all()?
        .sub(&real_score.mean_all()?)?
        .add(&gp.scale(w.lambda_gp))?;
    let cond = au_regression(&real_au, u_x)?;
    let mut total = adv.add(&cond.scale(w.lambda1))?;

    let mut d_hf = 0.0;
    if let Some(d_h) = d_h {
        let xh = high_pass_reconstruct(x)?;
        let xh_prime = high_pass_reconstruct(&x_prime)?;
        let gp_h = gradient_penalty(|t| d_h.score(t), &xh, &xh_prime, &draws.detail)?;
        let hf = d_h
            .score(&xh_prime)?
            .mean_all()?
            .sub(&d_h.score(&xh)?.mean_all()?)?
            .add(&gp_h.scale(w.lambda_gp))?;
        d_hf = hf.item() as f64;
        total = total.add(&hf)?;
    }
    Ok(DLosses {
        d_adv: adv.item() as f64,
        d_hf,
        d_cond: cond.item() as f64,
        total,
    })
}

#[derive(Debug, Clone)]
pub struct GLosses {
    /// `g_adv + g_hf + λ₂·g_cond + λ₃·(rec_self + rec_cycle)`.
    pub total: Tensor,
    pub g_adv: f64,
    pub g_hf: f64,
    pub g_cond: f64,
    pub rec_self: f64,
    pub rec_cycle: f64,
    /// The edited batch `G(x, u_y − u_x)`.
    pub edited: Tensor,
}

/// Generator objective. The critics are evaluated through detached copies,
/// so backward leaves their gradients untouched. Reconstruction terms are
/// elementwise mean absolute errors.
pub fn g_losses<G: ImageEditor, DI: ImageCritic, DH: DetailCritic>(
    g: &G,
    d_i: &DI,
    d_h: Option<&DH>,
    x: &Tensor,
    u_x: &Tensor,
    u_y: &Tensor,
    w: &LossWeights,
) -> Result<GLosses> {
    batch_match("images and source AUs", x, u_x)?;
    if u_x.shape() != u_y.shape() {
        return Err(invalid(
            "target AUs",
            format!("{:?} vs source {:?}", u_y.shape(), u_x.shape()),
        ));
    }
    let d_i = d_i.detached();
    let u_rel = u_y.sub(u_x)?;
    let zero = no_grad(|| u_rel.zeros_like());

    let x_prime = g.edit(x, &u_rel)?;
    let x_self = g.edit(x, &zero)?;
    let x_hat = g.edit(&x_prime, &u_rel.neg())?;

    let (score, au) = d_i.critique(&x_prime)?;
    let adv = score.mean_all()?.neg();
    let cond = au_regression(&au, u_y)?;
    let rec_self = l1_mean(x, &x_self)?;
    let rec_cycle = l1_mean(x, &x_hat)?;
    let mut total = adv
        .add(&cond.scale(w.lambda2))?
        .add(&rec_self.add(&rec_cycle)?.scale(w.lambda3))?;

    let mut g_hf = 0.0;
    if let Some(d_h) = d_h {
        let hf = d_h
            .detached()
            .score(&high_pass_reconstruct(&x_prime)?)?
            .mean_all()?
            .neg();
        g_hf = hf.item() as f64;
        total = total.add(&hf)?;
    }
    Ok(GLosses {
        g_adv: adv.item() as f64,
        g_hf,
        g_cond: cond.item() as f64,
        rec_self: rec_self.item() as f64,
        rec_cycle: rec_cycle.item() as f64,
        edited: x_prime,
        total,
    })
}

/// One training step's scalars. Generator fields are `None` on steps that
/// only update the critics.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossReport {
    pub d_adv: f64,
    pub d_hf: f64,
    pub d_cond: f64,
    pub g_adv: Option<f64>,
    pub g_hf: Option<f64>,
    pub g_cond: Option<f64>,
    pub rec_self: Option<f64>,
    pub rec_cycle: Option<f64>,
    pub total_d: f64,
    pub total_g: Option<f64>,
}

pub const LOG_HEADER: &str =
    "step,epoch,d_adv,d_hf,d_cond,g_adv,g_hf,g_cond,rec_self,rec_cycle,total_d,total_g";

impl LossReport {
    pub fn new(d: &DLosses, g: Option<&GLosses>) -> Self {
        LossReport {
            d_adv: d.d_adv,
            d_hf: d.d_hf,
            d_cond: d.d_cond,
            g_adv: g.map(|g| g.g_adv),
            g_hf: g.map(|g| g.g_hf),
            g_cond: g.map(|g| g.g_cond),
            rec_self: g.map(|g| g.rec_self),
            rec_cycle: g.map(|g| g.rec_cycle),
            total_d: d.total.item() as f64,
            total_g: g.map(|g| g.total.item() as f64),
        }
    }

    /// `d_adv + d_hf + λ₁·d_cond`.
    pub fn recomposed_d(&self, w: &LossWeights) -> f64 {
        self.d_adv + self.d_hf + w.lambda1 as f64 * self.d_cond
    }

    /// `g_adv + g_hf + λ₂·g_cond + λ₃·(rec_self + rec_cycle)`, when present.
    pub fn recomposed_g(&self, w: &LossWeights) -> Option<f64> {
        Some(
            self.g_adv?
                + self.g_hf?
                + w.lambda2 as f64 * self.g_cond?
                + w.lambda3 as f64 * (self.rec_self? + self.rec_cycle?),
        )
    }

    /// Comma-separated record matching [`LOG_HEADER`]; absent values are
    /// empty fields.
    pub fn csv_row(&self, step: u64, epoch: usize) -> String {
        let opt = |v: Option<f64>| v.map(|v| format!("{v:.9e}")).unwrap_or_default();
        let req = |v: f64| format!("{v:.9e}");
        [
            step.to_string(),
            epoch.to_string(),
            req(self.d_adv),
            req(self.d_hf),
            req(self.d_cond),
            opt(self.g_adv),
            opt(self.g_hf),
            opt(self.g_cond),
            opt(self.rec_self),
            opt(self.rec_cycle),
            req(self.total_d),
            opt(self.total_g),
        ]
        .join(",")
    }

    pub fn is_finite(&self) -> bool {
        let opts = [
            self.g_adv,
            self.g_hf,
            self.g_cond,
            self.rec_self,
            self.rec_cycle,
            self.total_g,
        ];
        [self.d_adv, self.d_hf, self.d_cond, self.total_d]
            .iter()
            .all(|v| v.is_finite())
            && opts.iter().flatten().all(|v| v.is_finite())
    }
}
