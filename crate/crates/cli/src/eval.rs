//! Paired evaluation of an editor on a dataset.

use hfedit_core::metrics::{
    acd, expression_distance, fid, inception_score, psnr_l1, ssim, to_unit, unbatch, FeatureNet,
    GaussianStats, MetricReport,
};
use hfedit_core::networks::ImageEditor;
use hfedit_core::synthfaces::Dataset;
use hfedit_core::{Error, Result};
use hfedit_tensor::{no_grad, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const CHUNK: usize = 16;

/// A partner for each of `n` samples, never the sample itself (for n > 1).
pub fn pair_partners(n: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            if n < 2 {
                return i;
            }
            let j = rng.gen_range(0..n - 1);
            if j >= i {
                j + 1
            } else {
                j
            }
        })
        .collect()
}

/// Inputs, edits towards each partner's AUs, self-reconstructions and the
/// partner AUs, for the first `n` samples.
pub struct EvalImages {
    pub inputs: Vec<Tensor>,
    pub edited: Vec<Tensor>,
    pub reconstructed: Vec<Tensor>,
    pub targets: Vec<Vec<f64>>,
    pub partners: Vec<usize>,
}

pub fn run_pairs<E: ImageEditor>(g: &E, data: &Dataset, n: usize, seed: u64) -> Result<EvalImages> {
    if n == 0 || n > data.len() {
        return Err(Error::Invalid {
            what: "evaluation size",
            detail: format!("{n} samples requested from a dataset of {}", data.len()),
        });
    }
    let partners = pair_partners(n, seed);
    let mut out = EvalImages {
        inputs: Vec::with_capacity(n),
        edited: Vec::with_capacity(n),
        reconstructed: Vec::with_capacity(n),
        targets: Vec::with_capacity(n),
        partners: partners.clone(),
    };
    let order: Vec<usize> = (0..n).collect();
    for chunk in order.chunks(CHUNK) {
        let tgt: Vec<usize> = chunk.iter().map(|&i| partners[i]).collect();
        let (x, u_x) = data.batch(chunk);
        let (_, u_y) = data.batch(&tgt);
        let (edited, recon) = no_grad(|| -> Result<(Tensor, Tensor)> {
            let u_rel = u_y.sub(&u_x)?;
            Ok((g.edit(&x, &u_rel)?, g.edit(&x, &u_rel.zeros_like())?))
        })?;
        out.inputs.extend(unbatch(&x)?);
        out.edited.extend(unbatch(&edited)?);
        out.reconstructed.extend(unbatch(&recon)?);
        out.targets.extend(
            tgt.iter()
                .map(|&j| data.au(j).iter().map(|&v| v as f64).collect::<Vec<_>>()),
        );
    }
    Ok(out)
}

/// Mean SSIM, PSNR and L1 between inputs and reconstructions, in unit range.
pub fn reconstruction_quality(inputs: &[Tensor], recon: &[Tensor]) -> Result<(f64, f64, f64)> {
    let (mut s, mut p, mut l) = (0.0, 0.0, 0.0);
    for (x, r) in inputs.iter().zip(recon) {
        let (xu, ru) = (to_unit(x), to_unit(r));
        s += ssim(&xu, &ru)?;
        let (psnr, l1) = psnr_l1(&xu, &ru)?;
        p += psnr;
        l += l1;
    }
    let n = inputs.len().max(1) as f64;
    Ok((s / n, p / n, l / n))
}

/// The full report. IS and FID need `feature_net`; without it they are
/// left unavailable.
pub fn report(images: &EvalImages, feature_net: Option<&FeatureNet>) -> Result<MetricReport> {
    let (ssim, psnr, l1) = reconstruction_quality(&images.inputs, &images.reconstructed)?;
    let (is_score, fid_value) = match feature_net {
        Some(net) => {
            let (probs, fake) = net.embed_all(&images.edited)?;
            let (_, real) = net.embed_all(&images.inputs)?;
            let d = fid(
                &GaussianStats::from_features(&real)?,
                &GaussianStats::from_features(&fake)?,
            )?;
            (Some(inception_score(&probs)?), Some(d))
        }
        None => (None, None),
    };
    Ok(MetricReport {
        is_score,
        fid: fid_value,
        acd: acd(&images.inputs, &images.edited)?,
        ssim,
        psnr,
        l1,
        ed: expression_distance(&images.edited, &images.targets)?,
    })
}

/// Whether an error only means the feature network missed its accuracy bar.
pub fn is_feature_shortfall(e: &Error) -> bool {
    matches!(e, Error::FeatureNetAccuracy { .. })
}
