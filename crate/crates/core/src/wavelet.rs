//! Single-level orthonormal 2-D Haar analysis and synthesis.
//!
//! Subband `XY` means horizontal filter `X`, vertical filter `Y`. With the
//! filters `f_L = (1, 1)/√2` and `f_H = (-1, 1)/√2` applied left to right
//! and top to bottom, the 2×2 block `[[a, b], [c, d]]` maps to
//!
//! ```text
//! LL = (a + b + c + d) / 2     HL = (-a + b - c + d) / 2
//! LH = (-a - b + c + d) / 2    HH = ( a - b - c + d) / 2
//! ```
//!
//! Analysis is a depthwise stride-2 convolution and synthesis is its
//! transpose, so both are ordinary differentiable tensor ops.

use hfedit_tensor::Tensor;

use crate::error::{invalid, Result};

/// Filter bank rows in storage order: LL, LH, HL, HH.
const BANK: [[f32; 4]; 4] = [
    [0.5, 0.5, 0.5, 0.5],
    [-0.5, -0.5, 0.5, 0.5],
    [-0.5, 0.5, -0.5, 0.5],
    [0.5, -0.5, -0.5, 0.5],
];

#[derive(Debug, Clone)]
pub struct Subbands {
    pub ll: Tensor,
    pub lh: Tensor,
    pub hl: Tensor,
    pub hh: Tensor,
}

impl Subbands {
    pub fn shape(&self) -> &[usize] {
        self.ll.shape()
    }

    /// Sum of squared coefficients over all four bands.
    pub fn energy(&self) -> f64 {
        [&self.ll, &self.lh, &self.hl, &self.hh]
            .iter()
            .map(|t| t.to_f64_vec().iter().map(|v| v * v).sum::<f64>())
            .sum()
    }
}

fn bank(rows: std::ops::Range<usize>, like: &Tensor) -> Tensor {
    let n = rows.len();
    let data: Vec<f32> = BANK[rows].iter().flatten().copied().collect();
    Tensor::from_vec(data, &[n, 1, 2, 2])
        .expect("bank shape")
        .to_dtype(like.dtype())
}

fn check_even(op: &'static str, x: &Tensor) -> Result<[usize; 4]> {
    let s = x.shape();
    if s.len() != 4 {
        return Err(invalid(op, format!("expected an NCHW tensor, got shape {s:?}")));
    }
    if !s[2].is_multiple_of(2) || !s[3].is_multiple_of(2) || s[2] == 0 || s[3] == 0 {
        return Err(invalid(
            op,
            format!("height and width must be even and nonzero, got {}x{}", s[2], s[3]),
        ));
    }
    Ok([s[0], s[1], s[2], s[3]])
}

/// All four bands stacked as `[n * c, 4, h/2, w/2]`.
fn analyze(x: &Tensor, op: &'static str) -> Result<(Tensor, [usize; 4])> {
    let [n, c, h, w] = check_even(op, x)?;
    let planes = x.reshape(&[n * c, 1, h, w])?;
    Ok((planes.conv2d(&bank(0..4, x), None, 2, 0)?, [n, c, h, w]))
}

fn band(stack: &Tensor, i: usize, shape: [usize; 4]) -> Result<Tensor> {
    Ok(stack.narrow(1, i, 1)?.reshape(&shape)?)
}

pub fn dwt2(x: &Tensor) -> Result<Subbands> {
    let (stack, [n, c, h, w]) = analyze(x, "dwt2 input")?;
    let half = [n, c, h / 2, w / 2];
    Ok(Subbands {
        ll: band(&stack, 0, half)?,
        lh: band(&stack, 1, half)?,
        hl: band(&stack, 2, half)?,
        hh: band(&stack, 3, half)?,
    })
}

pub fn idwt2(s: &Subbands) -> Result<Tensor> {
    let shape = s.ll.shape().to_vec();
    if shape.len() != 4 {
        return Err(invalid(
            "idwt2 subbands",
            format!("expected NCHW bands, got {shape:?}"),
        ));
    }
    for (name, b) in [("lh", &s.lh), ("hl", &s.hl), ("hh", &s.hh)] {
        if b.shape() != shape.as_slice() {
            return Err(invalid(
                "idwt2 subbands",
                format!("{name} has shape {:?} but ll has {shape:?}", b.shape()),
            ));
        }
    }
    let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    let flat = |t: &Tensor| t.reshape(&[n * c, 1, h, w]);
    let stack = Tensor::cat(&[&flat(&s.ll)?, &flat(&s.lh)?, &flat(&s.hl)?, &flat(&s.hh)?], 1)?;
    let planes = stack.conv_transpose2d(&bank(0..4, &s.ll), None, 2, 0)?;
    Ok(planes.reshape(&[n, c, 2 * h, 2 * w])?)
}

/// Synthesis from the detail bands alone (LL zeroed). Same shape as `x`.
pub fn high_pass_reconstruct(x: &Tensor) -> Result<Tensor> {
    let (stack, [n, c, h, w]) = analyze(x, "high_pass_reconstruct input")?;
    let detail = stack.narrow(1, 1, 3)?;
    let planes = detail.conv_transpose2d(&bank(1..4, x), None, 2, 0)?;
    Ok(planes.reshape(&[n, c, h, w])?)
}

/// Synthesis from LL alone: each 2×2 block replaced by its mean.
pub fn ll_only_reconstruct(x: &Tensor) -> Result<Tensor> {
    let (stack, [n, c, h, w]) = analyze(x, "ll_only_reconstruct input")?;
    let approx = stack.narrow(1, 0, 1)?;
    let planes = approx.conv_transpose2d(&bank(0..1, x), None, 2, 0)?;
    Ok(planes.reshape(&[n, c, h, w])?)
}

/// Display mosaic `[[LL, HL], [LH, HH]]` of a single `[c, h, w]` image, each
/// band min-max scaled to `[0, 1]` on its own. Constant bands map to 0.
pub fn subband_mosaic(image: &Tensor) -> Result<Tensor> {
    let s = image.shape();
    if s.len() != 3 {
        return Err(invalid("mosaic input", format!("expected CHW, got {s:?}")));
    }
    let (c, h, w) = (s[0], s[1], s[2]);
    let bands = dwt2(&image.reshape(&[1, c, h, w])?)?;
    let (bh, bw) = (h / 2, w / 2);
    let mut out = vec![0.0f32; c * h * w];
    let tiles = [
        (&bands.ll, 0, 0),
        (&bands.hl, 0, bw),
        (&bands.lh, bh, 0),
        (&bands.hh, bh, bw),
    ];
    for (t, oy, ox) in tiles {
        let v = t.to_vec();
        let lo = v.iter().copied().fold(f32::INFINITY, f32::min);
        let hi = v.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let span = hi - lo;
        for ch in 0..c {
            for y in 0..bh {
                for x in 0..bw {
                    let val = v[(ch * bh + y) * bw + x];
                    let scaled = if span > 0.0 { (val - lo) / span } else { 0.0 };
                    out[(ch * h + oy + y) * w + ox + x] = scaled;
                }
            }
        }
    }
    Ok(Tensor::from_vec(out, &[c, h, w])?)
}
