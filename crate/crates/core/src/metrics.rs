//! Image quality, identity and expression metrics.
//!
//! Image arguments are `[C, H, W]` or `[B, C, H, W]` tensors. SSIM, PSNR
//! and L1 expect values in `[0, 1]`; use [`to_unit`] on generator output.
//! Identity and expression distances go through the synthetic-face
//! extractors, and IS/FID through a small classifier trained on renders.

use std::fmt::Write as _;

use hfedit_tensor::{no_grad, Activation, Tensor};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Error, Result};
use crate::nn::{Conv, ConvKind, Module, LEAKY_SLOPE};
use crate::optim::Adam;
use crate::synthfaces::{
    expression_class, extract_au, extract_identity, render_face, sample_au, IdentityParams,
    N_EXPRESSION_CLASSES,
};
use crate::wavelet::dwt2;

/// Maps `[-1, 1]` onto `[0, 1]`.
pub fn to_unit(x: &Tensor) -> Tensor {
    x.shift(1.0).scale(0.5).detach()
}

/// The images of a `[B, C, H, W]` batch, or a single `[C, H, W]` image.
pub fn unbatch(x: &Tensor) -> Result<Vec<Tensor>> {
    match x.rank() {
        3 => Ok(vec![x.clone()]),
        4 => {
            let (b, rest) = (x.dim(0), &x.shape()[1..]);
            (0..b).map(|i| Ok(x.narrow(0, i, 1)?.reshape(rest)?)).collect()
        }
        _ => Err(invalid("image batch", format!("rank {} not 3 or 4", x.rank()))),
    }
}

const KL_FLOOR: f64 = 1e-12;

/// exp of the mean KL divergence between each row and the mean row.
pub fn inception_score(probs: &[Vec<f64>]) -> Result<f64> {
    let first = probs
        .first()
        .ok_or_else(|| invalid("probabilities", "empty set"))?;
    let c = first.len();
    if probs.iter().any(|p| p.len() != c) {
        return Err(invalid("probabilities", "rows differ in length"));
    }
    let n = probs.len() as f64;
    let marginal: Vec<f64> = (0..c)
        .map(|k| probs.iter().map(|p| p[k]).sum::<f64>() / n)
        .collect();
    let mean_kl = probs
        .iter()
        .map(|p| {
            p.iter()
                .zip(&marginal)
                .map(|(&a, &m)| {
                    let a = a.max(0.0);
                    if a == 0.0 {
                        0.0
                    } else {
                        a * (a.max(KL_FLOOR).ln() - m.max(KL_FLOOR).ln())
                    }
                })
                .sum::<f64>()
        })
        .sum::<f64>()
        / n;
    Ok(mean_kl.exp())
}

/// Mean and covariance of a feature set.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianStats {
    pub mu: DVector<f64>,
    pub sigma: DMatrix<f64>,
}

impl GaussianStats {
    /// Sample mean and unbiased covariance (biased when only one row).
    pub fn from_features(rows: &[Vec<f64>]) -> Result<Self> {
        let first = rows.first().ok_or_else(|| invalid("features", "empty set"))?;
        let f = first.len();
        if rows.iter().any(|r| r.len() != f) {
            return Err(invalid("features", "rows differ in length"));
        }
        let n = rows.len();
        let data = DMatrix::from_fn(n, f, |i, j| rows[i][j]);
        let mu = data.row_mean().transpose();
        let centred = DMatrix::from_fn(n, f, |i, j| data[(i, j)] - mu[j]);
        let sigma = centred.transpose() * &centred / (n.saturating_sub(1).max(1)) as f64;
        Ok(Self { mu, sigma })
    }

    fn check(&self) -> Result<()> {
        let f = self.mu.len();
        if self.sigma.shape() != (f, f) {
            return Err(invalid("statistics", "covariance does not match the mean"));
        }
        if self.mu.iter().chain(self.sigma.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature statistics".into()));
        }
        Ok(())
    }
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Eigenvalue clamp below which a value counts as zero.
const EIG_TOL: f64 = 1e-8;

/// Frechet distance between two Gaussians. The trace of the matrix square
/// root of `Sa Sb` comes from the eigenvalues of `Sa^1/2 Sb Sa^1/2`, which
/// share the spectrum of `Sa Sb` but are symmetric, so real.
pub fn fid(a: &GaussianStats, b: &GaussianStats) -> Result<f64> {
    a.check()?;
    b.check()?;
    if a.mu.len() != b.mu.len() {
        return Err(invalid(
            "statistics",
            format!("dimensions {} and {}", a.mu.len(), b.mu.len()),
        ));
    }
    let clamp = |v: f64| if v < EIG_TOL { 0.0 } else { v };
    let ea = SymmetricEigen::new(symmetrize(&a.sigma));
    let root = DVector::from_iterator(
        ea.eigenvalues.len(),
        ea.eigenvalues.iter().map(|&v| clamp(v).sqrt()),
    );
    let sqrt_a = &ea.eigenvectors * DMatrix::from_diagonal(&root) * ea.eigenvectors.transpose();
    let inner = symmetrize(&(&sqrt_a * &b.sigma * &sqrt_a));
    let tr_sqrt: f64 = SymmetricEigen::new(inner)
        .eigenvalues
        .iter()
        .map(|&v| clamp(v).sqrt())
        .sum();
    let diff = (&a.mu - &b.mu).norm_squared();
    Ok((diff + a.sigma.trace() + b.sigma.trace() - 2.0 * tr_sqrt).max(0.0))
}

fn l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Mean identity-embedding distance between paired images.
pub fn acd(inputs: &[Tensor], outputs: &[Tensor]) -> Result<f64> {
    if inputs.len() != outputs.len() || inputs.is_empty() {
        return Err(invalid(
            "image pairs",
            format!("{} inputs, {} outputs", inputs.len(), outputs.len()),
        ));
    }
    let total: f64 = inputs
        .iter()
        .zip(outputs)
        .map(|(x, g)| l2(&extract_identity(x), &extract_identity(g)))
        .sum();
    Ok(total / inputs.len() as f64)
}

/// Mean distance between extracted and target AU vectors.
pub fn expression_distance(generated: &[Tensor], targets: &[Vec<f64>]) -> Result<f64> {
    if generated.len() != targets.len() || generated.is_empty() {
        return Err(invalid(
            "expression pairs",
            format!("{} images, {} targets", generated.len(), targets.len()),
        ));
    }
    let total: f64 = generated
        .iter()
        .zip(targets)
        .map(|(g, u)| l2(&extract_au(g), u))
        .sum();
    Ok(total / generated.len() as f64)
}

pub const SSIM_WINDOW: usize = 8;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

fn planes(x: &Tensor) -> Result<(usize, usize, usize)> {
    match x.shape() {
        [c, h, w] => Ok((*c, *h, *w)),
        [b, c, h, w] => Ok((b * c, *h, *w)),
        s => Err(invalid(
            "image",
            format!("expected [C, H, W] or [B, C, H, W], got {s:?}"),
        )),
    }
}

/// Mean SSIM over all 8x8 windows (stride 1, uniform weights) and planes.
pub fn ssim(x: &Tensor, y: &Tensor) -> Result<f64> {
    if x.shape() != y.shape() {
        return Err(invalid(
            "ssim",
            format!("shapes {:?} and {:?}", x.shape(), y.shape()),
        ));
    }
    let (p, h, w) = planes(x)?;
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(invalid(
            "ssim",
            format!("{h}x{w} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"),
        ));
    }
    let (xd, yd) = (x.to_f64_vec(), y.to_f64_vec());
    let k = SSIM_WINDOW;
    let n = (k * k) as f64;
    let mut total = 0.0;
    let mut count = 0usize;
    for plane in 0..p {
        let off = plane * h * w;
        for i in 0..=h - k {
            for j in 0..=w - k {
                let (mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for a in i..i + k {
                    for b in j..j + k {
                        let (u, v) = (xd[off + a * w + b], yd[off + a * w + b]);
                        sx += u;
                        sy += v;
                        sxx += u * u;
                        syy += v * v;
                        sxy += u * v;
                    }
                }
                let (mx, my) = (sx / n, sy / n);
                let vx = (sxx / n - mx * mx).max(0.0);
                let vy = (syy / n - my * my).max(0.0);
                let cxy = sxy / n - mx * my;
                total += (2.0 * mx * my + SSIM_C1) * (2.0 * cxy + SSIM_C2)
                    / ((mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2));
                count += 1;
            }
        }
    }
    Ok(total / count as f64)
}

pub const PSNR_CAP: f64 = 100.0;

/// `(psnr in dB, mean absolute difference)` on unit-range images.
pub fn psnr_l1(x: &Tensor, y: &Tensor) -> Result<(f64, f64)> {
    if x.shape() != y.shape() || x.numel() == 0 {
        return Err(invalid(
            "psnr",
            format!("shapes {:?} and {:?}", x.shape(), y.shape()),
        ));
    }
    let (mut abs, mut sq) = (0.0, 0.0);
    for (a, b) in x.to_f64_vec().iter().zip(y.to_f64_vec()) {
        abs += (a - b).abs();
        sq += (a - b) * (a - b);
    }
    let n = x.numel() as f64;
    let mse = sq / n;
    let psnr = if mse < 1e-10 {
        PSNR_CAP
    } else {
        (10.0 * (1.0 / mse).log10()).min(PSNR_CAP)
    };
    Ok((psnr, abs / n))
}

/// Class probabilities and feature vectors, one row per image.
pub type Embedding = (Vec<Vec<f64>>, Vec<Vec<f64>>);

/// Small expression classifier standing in for a pretrained recognition
/// network: strided convolutions down to a 4x4 map, a 4x4 convolution to a
/// `FEATURES`-wide vector, then a linear head over the expression classes.
#[derive(Debug, Clone)]
pub struct FeatureNet {
    pub trunk: Vec<Conv>,
    pub embed: Conv,
    pub head: Conv,
}

impl FeatureNet {
    pub const FEATURES: usize = 32;

    /// A fresh network for `size`-pixel images (a power of two, at least 8).
    pub fn new(size: usize, seed: u64) -> Result<Self> {
        if !size.is_power_of_two() || size < 8 {
            return Err(invalid(
                "image size",
                format!("{size} is not a power of two >= 8"),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let depth = (size / 4).trailing_zeros() as usize;
        let mut c_in = 3;
        let mut trunk = Vec::with_capacity(depth);
        for i in 0..depth {
            let c_out = if i == 0 { 16 } else { 32 };
            trunk.push(Conv::new(
                &format!("F.trunk.{i}"),
                ConvKind::Forward,
                c_in,
                c_out,
                4,
                2,
                1,
                true,
                &mut rng,
            ));
            c_in = c_out;
        }
        let embed = Conv::new(
            "F.embed",
            ConvKind::Forward,
            c_in,
            Self::FEATURES,
            4,
            1,
            0,
            true,
            &mut rng,
        );
        let head = Conv::new(
            "F.head",
            ConvKind::Forward,
            Self::FEATURES,
            N_EXPRESSION_CLASSES,
            1,
            1,
            0,
            true,
            &mut rng,
        );
        let mut net = Self { trunk, embed, head };
        // He-scaled weights; the GAN initialization is too small for a net
        // trained from scratch in a few epochs
        net.visit_mut(&mut |p| {
            if p.name().ends_with(".weight") {
                let fan_in = p.shape()[1..].iter().product::<usize>() as f32;
                let scale = (2.0 / fan_in).sqrt() / crate::nn::INIT_STD;
                let w: Vec<f32> = p.tensor().to_vec().iter().map(|v| v * scale).collect();
                p.set_data(w).expect("same size");
            }
        });
        Ok(net)
    }

    /// Logits `[B, C]` and features `[B, F]` for images in `[-1, 1]`.
    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let act = Activation::LeakyRelu(LEAKY_SLOPE);
        let mut h = x.clone();
        for conv in &self.trunk {
            h = act.apply(&conv.forward(&h)?);
        }
        let b = x.dim(0);
        let feats = act.apply(&self.embed.forward(&h)?);
        let logits = self.head.forward(&feats)?.reshape(&[b, N_EXPRESSION_CLASSES])?;
        Ok((logits, feats.reshape(&[b, Self::FEATURES])?))
    }

    /// Class probabilities and features, one row per image.
    pub fn embed(&self, x: &Tensor) -> Result<Embedding> {
        no_grad(|| {
            let (logits, feats) = self.forward(x)?;
            let c = N_EXPRESSION_CLASSES;
            let probs = logits.to_f64_vec().chunks(c).map(softmax).collect();
            let feats = feats
                .to_f64_vec()
                .chunks(Self::FEATURES)
                .map(<[f64]>::to_vec)
                .collect();
            Ok((probs, feats))
        })
    }

    /// Embeds a long batch in chunks.
    pub fn embed_all(&self, images: &[Tensor]) -> Result<Embedding> {
        let (mut probs, mut feats) = (Vec::new(), Vec::new());
        for chunk in images.chunks(64) {
            let refs: Vec<&Tensor> = chunk.iter().collect();
            let batch = stack(&refs)?;
            let (p, f) = self.embed(&batch)?;
            probs.extend(p);
            feats.extend(f);
        }
        Ok((probs, feats))
    }

    pub fn accuracy(&self, images: &[Tensor], labels: &[usize]) -> Result<f64> {
        let (probs, _) = self.embed_all(images)?;
        let hits = probs.iter().zip(labels).filter(|(p, &l)| argmax(p) == l).count();
        Ok(hits as f64 / labels.len().max(1) as f64)
    }
}

impl Module for FeatureNet {
    fn visit(&self, f: &mut dyn FnMut(&hfedit_tensor::Parameter)) {
        self.trunk.visit(f);
        self.embed.visit(f);
        self.head.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut hfedit_tensor::Parameter)) {
        self.trunk.visit_mut(f);
        self.embed.visit_mut(f);
        self.head.visit_mut(f);
    }
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

fn argmax(p: &[f64]) -> usize {
    p.iter()
        .enumerate()
        .fold(
            (0, f64::NEG_INFINITY),
            |best, (i, &v)| if v > best.1 { (i, v) } else { best },
        )
        .0
}

/// Stacks `[C, H, W]` images into a batch.
pub fn stack(images: &[&Tensor]) -> Result<Tensor> {
    if images.is_empty() {
        return Err(invalid("image batch", "empty"));
    }
    let parts: Vec<Tensor> = images
        .iter()
        .map(|t| {
            let mut s = vec![1];
            s.extend_from_slice(t.shape());
            t.reshape(&s)
        })
        .collect::<std::result::Result<_, _>>()?;
    let refs: Vec<&Tensor> = parts.iter().collect();
    Ok(Tensor::cat(&refs, 0)?)
}

/// Mean cross-entropy of `logits` against integer labels.
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<Tensor> {
    let (b, c) = (logits.dim(0), logits.dim(1));
    let rows = logits.to_f64_vec();
    let maxes: Vec<f32> = rows
        .chunks(c)
        .map(|r| r.iter().cloned().fold(f64::NEG_INFINITY, f64::max) as f32)
        .collect();
    let dtype = logits.dtype();
    let z = logits.sub(&Tensor::from_vec(maxes, &[b, 1])?.to_dtype(dtype))?;
    let lse = z.exp().sum_to(&[b, 1])?.ln();
    let logp = z.sub(&lse)?;
    let mut onehot = vec![0f32; b * c];
    for (i, &l) in labels.iter().enumerate() {
        onehot[i * c + l] = 1.0;
    }
    let onehot = Tensor::from_vec(onehot, &[b, c])?.to_dtype(dtype);
    Ok(logp.mul(&onehot)?.sum_all().scale(-1.0 / b as f32))
}

/// Budget and data for training the feature network on fresh renders.
#[derive(Debug, Clone)]
pub struct FeatureNetTraining {
    pub size: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub required_accuracy: f64,
}

impl Default for FeatureNetTraining {
    fn default() -> Self {
        Self {
            size: 64,
            n_train: 2000,
            n_test: 500,
            epochs: 10,
            batch: 32,
            lr: 2e-3,
            required_accuracy: 0.90,
        }
    }
}

/// Random renders with their expression classes.
pub fn labelled_renders(n: usize, size: usize, seed: u64) -> Result<(Vec<Tensor>, Vec<usize>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut images = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let id = IdentityParams::sample(&mut rng);
        let au = sample_au(&mut rng);
        images.push(render_face(&id, &au, size)?);
        labels.push(expression_class(&au));
    }
    Ok((images, labels))
}

/// Trains a [`FeatureNet`] on labelled images; deterministic given `seed`.
pub fn train_feature_net(
    images: &[Tensor],
    labels: &[usize],
    plan: &FeatureNetTraining,
    seed: u64,
) -> Result<FeatureNet> {
    if images.is_empty() || images.len() != labels.len() {
        return Err(invalid(
            "feature net data",
            format!("{} images, {} labels", images.len(), labels.len()),
        ));
    }
    let mut net = FeatureNet::new(images[0].dim(1), seed)?;
    let mut opt = Adam::new(0.9, 0.999);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut order: Vec<usize> = (0..images.len()).collect();
    let steps_per_epoch = images.len().div_ceil(plan.batch);
    let total = plan.epochs * steps_per_epoch;
    let mut step = 0;
    for _ in 0..plan.epochs {
        order.shuffle(&mut rng);
        for idx in order.chunks(plan.batch) {
            let batch: Vec<&Tensor> = idx.iter().map(|&i| &images[i]).collect();
            let y: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
            let (logits, _) = net.forward(&stack(&batch)?)?;
            let loss = cross_entropy(&logits, &y)?;
            net.zero_grad();
            loss.backward()?;
            // cosine decay keeps the last epochs from bouncing near class borders
            let lr = plan.lr * 0.5 * (1.0 + (std::f64::consts::PI * step as f64 / total as f64).cos());
            opt.step(&mut net, lr)?;
            step += 1;
        }
    }
    Ok(net)
}

/// Trains on fresh renders and checks held-out accuracy. Returns the net
/// and its accuracy, or [`Error::FeatureNetAccuracy`] below the bar.
pub fn train_feature_net_on_renders(plan: &FeatureNetTraining, seed: u64) -> Result<(FeatureNet, f64)> {
    let (train_x, train_y) = labelled_renders(plan.n_train, plan.size, seed)?;
    let (test_x, test_y) = labelled_renders(plan.n_test, plan.size, seed.wrapping_add(1) ^ 0x7e57)?;
    let net = train_feature_net(&train_x, &train_y, plan, seed)?;
    let accuracy = net.accuracy(&test_x, &test_y)?;
    if accuracy < plan.required_accuracy {
        return Err(Error::FeatureNetAccuracy {
            accuracy,
            required: plan.required_accuracy,
        });
    }
    Ok((net, accuracy))
}

/// One evaluation row. IS and FID are `None` when the feature network is
/// unavailable.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub is_score: Option<f64>,
    pub fid: Option<f64>,
    pub acd: f64,
    pub ssim: f64,
    pub psnr: f64,
    pub l1: f64,
    pub ed: f64,
}

pub const UNAVAILABLE: &str = "NA";

impl MetricReport {
    pub const HEADER: &'static str = "is,fid,acd,ssim,psnr,l1,ed";

    /// Header plus one row; `run` holds extra `(column, value)` identifiers
    /// appended after the metric columns.
    pub fn to_csv(&self, run: &[(&str, String)]) -> String {
        let opt = |v: Option<f64>| v.map_or_else(|| UNAVAILABLE.to_string(), |v| format!("{v:.6}"));
        let mut header = Self::HEADER.to_string();
        let mut row = format!(
            "{},{},{:.6},{:.6},{:.6},{:.6},{:.6}",
            opt(self.is_score),
            opt(self.fid),
            self.acd,
            self.ssim,
            self.psnr,
            self.l1,
            self.ed
        );
        for (k, v) in run {
            let _ = write!(header, ",{k}");
            let _ = write!(row, ",{v}");
        }
        format!("{header}\n{row}\n")
    }
}

/// Mean absolute difference between the detail subbands (LH, HL, HH) of two
/// image batches.
pub fn detail_l1(x: &Tensor, y: &Tensor) -> Result<f64> {
    if x.shape() != y.shape() {
        return Err(invalid(
            "detail l1",
            format!("shapes {:?} and {:?}", x.shape(), y.shape()),
        ));
    }
    let batch = |t: &Tensor| -> Result<Tensor> {
        match t.rank() {
            3 => Ok(t.reshape(&[1, t.dim(0), t.dim(1), t.dim(2)])?),
            _ => Ok(t.clone()),
        }
    };
    let (a, b) = (dwt2(&batch(x)?)?, dwt2(&batch(y)?)?);
    let mut total = 0.0;
    let mut n = 0usize;
    for (p, q) in [(&a.lh, &b.lh), (&a.hl, &b.hl), (&a.hh, &b.hh)] {
        total += p
            .to_f64_vec()
            .iter()
            .zip(q.to_f64_vec())
            .map(|(u, v)| (u - v).abs())
            .sum::<f64>();
        n += p.numel();
    }
    Ok(total / n as f64)
}
