//! Procedural faces whose expression and identity can be measured back.
//!
//! Every feature is drawn so that a linear image functional recovers its
//! parameter: feature masses are column integrals of vertically blurred
//! intervals, positions are centroids of symmetric profiles, and shading
//! is a ratio against the forehead. Edges are Gaussian-blurred by half a
//! pixel and sampled on a 2x2 grid per pixel, which keeps those integrals
//! exact up to aliasing terms far below 8-bit quantization.
//!
//! Coordinates are fractions of the image side, `y` growing downwards.

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use hfedit_tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, io_err, Error, Result};
use crate::imageio;

/// Number of expression parameters the renderer draws.
pub const N_AU: usize = 5;
/// Length of the identity measurement vector.
pub const N_IDENTITY: usize = 4;
/// AU coordinates whose halves define the eight expression classes.
pub const EXPRESSION_AUS: [usize; 3] = [0, 1, 2];
pub const N_EXPRESSION_CLASSES: usize = 8;

const FACE_R: f64 = 0.42;
const FACE_C: f64 = 0.5;

const EYE_Y: f64 = 0.42;
const EYE_HALF_W: f64 = 0.06;
const EYE_B0: f64 = 0.005;
const EYE_B1: f64 = 0.035;

const BROW_Y0: f64 = 0.33;
const BROW_DY: f64 = 0.05;
const BROW_HALF_W: f64 = 0.065;
const BROW_HALF_T: f64 = 0.012;

const MOUTH_Y: f64 = 0.70;
const MOUTH_HALF_W: f64 = 0.12;
const MOUTH_E0: f64 = -0.02;
const MOUTH_E1: f64 = 0.06;
const MOUTH_T0: f64 = 0.024;
const MOUTH_T1: f64 = 0.03;

const CHEEK_DX: f64 = 0.23;
const CHEEK_Y: f64 = 0.62;
const CHEEK_R: f64 = 0.07;
const CHEEK_CORE: f64 = 0.03;
const CHEEK_B0: f64 = 0.05;
const CHEEK_B1: f64 = 0.45;

const HUE_SPAN: f64 = 2.0 * PI * 5.0 / 6.0;

const BACKGROUND: [f64; 3] = [0.12, 0.16, 0.24];
const EYE_RGB: [f64; 3] = [0.06, 0.05, 0.05];
const BROW_RGB: [f64; 3] = [0.25, 0.18, 0.12];
const MOUTH_RGB: [f64; 3] = [0.45, 0.08, 0.10];

// measurement windows, matched against pixel centres
const FOREHEAD: Window = Window::new(0.42, 0.58, 0.185, 0.236);
const WIDTH_ROWS: (f64, f64) = (0.47, 0.52);
const EYE_BAND: Window = Window::new(0.21, 0.79, 0.361, 0.49);
const BROW_BAND: Window = Window::new(0.21, 0.79, 0.24, 0.361);
const MOUTH_BOX: Window = Window::new(0.37, 0.63, 0.60, 0.80);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdentityParams {
    pub face_hue: f64,
    pub face_aspect: f64,
    pub eye_spacing: f64,
    pub skin_tone: f64,
}

impl IdentityParams {
    pub const HUE: (f64, f64) = (0.0, 1.0);
    pub const ASPECT: (f64, f64) = (0.8, 1.2);
    pub const SPACING: (f64, f64) = (0.2, 0.4);
    pub const TONE: (f64, f64) = (0.3, 0.9);

    fn ranges() -> [(f64, f64); N_IDENTITY] {
        [Self::HUE, Self::ASPECT, Self::SPACING, Self::TONE]
    }

    pub fn to_array(&self) -> [f64; N_IDENTITY] {
        [self.face_hue, self.face_aspect, self.eye_spacing, self.skin_tone]
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        let [face_hue, face_aspect, eye_spacing, skin_tone] = <[f64; 4]>::try_from(v).map_err(|_| {
            invalid(
                "identity",
                format!("expected {N_IDENTITY} values, got {}", v.len()),
            )
        })?;
        let id = Self {
            face_hue,
            face_aspect,
            eye_spacing,
            skin_tone,
        };
        id.validate()?;
        Ok(id)
    }

    /// Each field rescaled from its range onto `[0, 1]`.
    pub fn normalized(&self) -> [f64; N_IDENTITY] {
        let mut out = self.to_array();
        for (v, (lo, hi)) in out.iter_mut().zip(Self::ranges()) {
            *v = (*v - lo) / (hi - lo);
        }
        out
    }

    /// Inverse of [`IdentityParams::normalized`].
    pub fn from_normalized(n: [f64; N_IDENTITY]) -> Self {
        let r = Self::ranges();
        let f = |i: usize| r[i].0 * (1.0 - n[i]) + r[i].1 * n[i];
        Self {
            face_hue: f(0),
            face_aspect: f(1),
            eye_spacing: f(2),
            skin_tone: f(3),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let names = ["face_hue", "face_aspect", "eye_spacing", "skin_tone"];
        for ((v, (lo, hi)), name) in self.to_array().into_iter().zip(Self::ranges()).zip(names) {
            if !(lo..=hi).contains(&v) {
                return Err(invalid("identity", format!("{name} = {v} outside [{lo}, {hi}]")));
            }
        }
        Ok(())
    }

    /// Uniform over the parameter box, on a 1e-6 lattice so that labels
    /// print exactly.
    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let mut n = [0.0; N_IDENTITY];
        for v in &mut n {
            *v = lattice_uniform(rng);
        }
        let id = Self::from_normalized(n);
        // keep the stored values on the same lattice
        let q = |v: f64| (v * 1e6).round() / 1e6;
        Self {
            face_hue: q(id.face_hue),
            face_aspect: q(id.face_aspect),
            eye_spacing: q(id.eye_spacing),
            skin_tone: q(id.skin_tone),
        }
    }

    fn skin(&self) -> [f64; 3] {
        let l = luminance(self.skin_tone);
        let theta = HUE_SPAN * self.face_hue;
        std::array::from_fn(|k| l * (0.8 + 0.2 * (theta - 2.0 * PI * k as f64 / 3.0).cos()))
    }

    fn radii(&self) -> (f64, f64) {
        let s = self.face_aspect.sqrt();
        (FACE_R / s, FACE_R * s)
    }
}

fn luminance(tone: f64) -> f64 {
    0.25 + 0.7 * tone
}

fn lattice_uniform<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.gen_range(0..=1_000_000u32) as f64 / 1e6
}

/// Uniform AU vector on the 1e-6 lattice.
pub fn sample_au<R: Rng + ?Sized>(rng: &mut R) -> [f64; N_AU] {
    std::array::from_fn(|_| lattice_uniform(rng))
}

/// Expression class from which side of 0.5 the designated AUs fall on.
pub fn expression_class(au: &[f64]) -> usize {
    EXPRESSION_AUS
        .iter()
        .enumerate()
        .map(|(bit, &k)| ((au[k] >= 0.5) as usize) << bit)
        .sum()
}

fn check_au(au: &[f64]) -> Result<()> {
    if au.len() != N_AU {
        return Err(invalid("au", format!("expected {N_AU} values, got {}", au.len())));
    }
    if let Some((i, v)) = au.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
        return Err(invalid("au", format!("au[{i}] = {v} outside [0, 1]")));
    }
    Ok(())
}

fn phi(z: f64) -> f64 {
    0.5 * (1.0 + libm::erf(z * FRAC_1_SQRT_2))
}

/// Coverage of `[top, bot]` blurred vertically by N(0, sigma^2), at `y`.
fn band(y: f64, top: f64, bot: f64, sigma: f64) -> f64 {
    phi((bot - y) / sigma) - phi((top - y) / sigma)
}

fn blend(c: &mut [f64; 3], f: [f64; 3], alpha: f64) {
    for k in 0..3 {
        c[k] += alpha * (f[k] - c[k]);
    }
}

/// Normalized lens profile, C1 at its ends.
fn lens(t: f64) -> f64 {
    if t.abs() >= 1.0 {
        0.0
    } else {
        let s = 1.0 - t * t;
        s * s
    }
}

struct Scene {
    skin: [f64; 3],
    rx: f64,
    ry: f64,
    eyes: [f64; 2],
    eye_b: f64,
    brow_y: f64,
    mouth_e: f64,
    mouth_t: f64,
    cheek_beta: f64,
    sigma: f64,
}

impl Scene {
    fn new(id: &IdentityParams, au: &[f64], size: usize) -> Self {
        let (rx, ry) = id.radii();
        let half = id.eye_spacing / 2.0;
        Self {
            skin: id.skin(),
            rx,
            ry,
            eyes: [FACE_C - half, FACE_C + half],
            eye_b: EYE_B0 + EYE_B1 * au[0],
            mouth_e: MOUTH_E0 + MOUTH_E1 * au[1],
            mouth_t: MOUTH_T0 + MOUTH_T1 * au[2],
            brow_y: BROW_Y0 - BROW_DY * au[3],
            cheek_beta: CHEEK_B0 + CHEEK_B1 * au[4],
            sigma: 0.5 / size as f64,
        }
    }

    fn face_alpha(&self, x: f64, y: f64) -> f64 {
        let (u, v) = ((x - FACE_C) / self.rx, (y - FACE_C) / self.ry);
        let rho = (u * u + v * v).sqrt();
        if rho < 0.5 {
            return 1.0;
        }
        let grad = ((u / self.rx).powi(2) + (v / self.ry).powi(2)).sqrt() / rho;
        phi(-(rho - 1.0) / grad / self.sigma)
    }

    fn sample(&self, x: f64, y: f64) -> [f64; 3] {
        let s = self.sigma;
        let reach = 6.0 * s;
        let a = self.face_alpha(x, y);
        let mut c: [f64; 3] = std::array::from_fn(|k| BACKGROUND[k] + a * (self.skin[k] - BACKGROUND[k]));

        if (y - CHEEK_Y).abs() < CHEEK_R + reach {
            for cx in [FACE_C - CHEEK_DX, FACE_C + CHEEK_DX] {
                let d = ((x - cx).powi(2) + (y - CHEEK_Y).powi(2)).sqrt();
                if d < CHEEK_R + reach {
                    let shade = 1.0 - self.cheek_beta * phi((CHEEK_R - d) / s);
                    c.iter_mut().for_each(|v| *v *= shade);
                }
            }
        }

        if (y - self.brow_y).abs() < BROW_HALF_T + reach {
            for &ex in &self.eyes {
                let t = (x - ex) / BROW_HALF_W;
                if t.abs() < 1.0 {
                    let h = BROW_HALF_T * (1.0 - 0.5 * t * t);
                    blend(&mut c, BROW_RGB, band(y, self.brow_y - h, self.brow_y + h, s));
                }
            }
        }

        if (y - EYE_Y).abs() < self.eye_b + reach {
            for &ex in &self.eyes {
                let h = self.eye_b * lens((x - ex) / EYE_HALF_W);
                if h > 0.0 {
                    blend(&mut c, EYE_RGB, band(y, EYE_Y - h, EYE_Y + h, s));
                }
            }
        }

        let t = (x - FACE_C) / MOUTH_HALF_W;
        if t.abs() < 1.0 {
            let yc = MOUTH_Y - self.mouth_e * t * t;
            let h = 0.5 * self.mouth_t * lens(t);
            if (y - yc).abs() < h + reach {
                blend(&mut c, MOUTH_RGB, band(y, yc - h, yc + h, s));
            }
        }
        c
    }
}

/// Subsample offsets within a pixel, in pixel units.
const SUB: [f64; 2] = [0.25, 0.75];

/// Renders a `[3, size, size]` face with values in `[-1, 1]`.
pub fn render_face(id: &IdentityParams, au: &[f64], size: usize) -> Result<Tensor> {
    id.validate()?;
    check_au(au)?;
    if size < 32 || !size.is_multiple_of(2) {
        return Err(invalid(
            "image size",
            format!("{size} must be even and at least 32"),
        ));
    }
    let scene = Scene::new(id, au, size);
    let inv = 1.0 / size as f64;
    let plane = size * size;
    let mut out = vec![0f32; 3 * plane];
    for i in 0..size {
        for j in 0..size {
            let mut acc = [0.0; 3];
            for dy in SUB {
                for dx in SUB {
                    let c = scene.sample((j as f64 + dx) * inv, (i as f64 + dy) * inv);
                    acc.iter_mut().zip(c).for_each(|(a, v)| *a += v);
                }
            }
            for k in 0..3 {
                out[k * plane + i * size + j] = (acc[k] / 2.0 - 1.0) as f32;
            }
        }
    }
    Ok(Tensor::from_vec(out, &[3, size, size])?)
}

#[derive(Clone, Copy)]
struct Window {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Window {
    const fn new(x0: f64, x1: f64, y0: f64, y1: f64) -> Self {
        Self { x0, x1, y0, y1 }
    }
}

/// An image in `[0, 1]` RGB with pixel-centre coordinates.
struct Raster {
    size: usize,
    rgb: Vec<[f64; 3]>,
}

impl Raster {
    fn new(img: &Tensor) -> Option<Self> {
        let &[3, h, w] = img.shape() else { return None };
        if h != w || h < 4 {
            return None;
        }
        let data = img.to_f64_vec();
        let plane = h * w;
        let rgb = (0..plane)
            .map(|p| {
                std::array::from_fn(|k| {
                    let v = (data[k * plane + p] + 1.0) / 2.0;
                    if v.is_finite() {
                        v
                    } else {
                        0.0
                    }
                })
            })
            .collect();
        Some(Self { size: h, rgb })
    }

    fn centre(&self, i: usize) -> f64 {
        (i as f64 + 0.5) / self.size as f64
    }

    fn range(&self, lo: f64, hi: f64) -> std::ops::Range<usize> {
        let n = self.size as f64;
        let first = (lo * n - 0.5).ceil().max(0.0) as usize;
        let last = ((hi * n - 0.5).floor() + 1.0).clamp(0.0, n) as usize;
        first..last.max(first)
    }

    fn px(&self, i: usize, j: usize) -> [f64; 3] {
        self.rgb[i * self.size + j]
    }

    fn mean(&self, w: Window) -> [f64; 3] {
        let mut acc = [0.0; 3];
        let mut n = 0.0;
        for i in self.range(w.y0, w.y1) {
            for j in self.range(w.x0, w.x1) {
                acc.iter_mut().zip(self.px(i, j)).for_each(|(a, v)| *a += v);
                n += 1.0;
            }
        }
        acc.map(|a| a / f64::max(n, 1.0))
    }
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    std::array::from_fn(|k| a[k] - b[k])
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Fraction of the way from `base` towards `target`, by projection.
struct Coverage {
    base: [f64; 3],
    dir: [f64; 3],
    norm2: f64,
}

impl Coverage {
    fn new(base: [f64; 3], target: [f64; 3]) -> Self {
        let dir = sub(target, base);
        Self {
            base,
            dir,
            norm2: dot(dir, dir),
        }
    }

    fn at(&self, p: [f64; 3]) -> f64 {
        if self.norm2 < 1e-8 {
            return 0.0;
        }
        dot(sub(p, self.base), self.dir) / self.norm2
    }
}

/// Sum over horizontal subsample positions of `profile(t)` for a feature
/// centred at `xc` with half width `half_w`, times the subsample width.
fn profile_sum(size: usize, xc: f64, half_w: f64, profile: impl Fn(f64) -> f64) -> f64 {
    let n = size as f64;
    let mut acc = 0.0;
    for j in 0..size {
        for dx in SUB {
            acc += profile(((j as f64 + dx) / n - xc) / half_w);
        }
    }
    acc / (2.0 * n)
}

fn clamp01(v: f64) -> f64 {
    if v.is_finite() {
        v.clamp(0.0, 1.0)
    } else {
        0.0
    }
}

/// Raw geometric measurements of a face image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measurements {
    pub skin: [f64; 3],
    pub eye_aperture: f64,
    pub eye_centres: [f64; 2],
    pub mouth_elevation: f64,
    pub mouth_thickness: f64,
    pub brow_y: f64,
    pub cheek_beta: f64,
    pub face_rx: f64,
}

/// Measures every renderer parameter of a `[3, S, S]` image. Degenerate
/// inputs give finite but meaningless numbers.
pub fn measure(img: &Tensor) -> Option<Measurements> {
    let r = Raster::new(img)?;
    let n = r.size as f64;
    let skin = r.mean(FOREHEAD);

    // eyes: mass and horizontal centroid on each side of the midline
    let eye_cov = Coverage::new(skin, EYE_RGB);
    let mut mass = [0.0; 2];
    let mut moment = [0.0; 2];
    let mut weight = [0.0; 2];
    for i in r.range(EYE_BAND.y0, EYE_BAND.y1) {
        for j in r.range(EYE_BAND.x0, EYE_BAND.x1) {
            let x = r.centre(j);
            let side = (x > FACE_C) as usize;
            let c = eye_cov.at(r.px(i, j));
            mass[side] += c;
            weight[side] += c.max(0.0);
            moment[side] += c.max(0.0) * x;
        }
    }
    let eye_centres = [0, 1].map(|s| {
        if weight[s] > 1e-9 {
            moment[s] / weight[s]
        } else {
            FACE_C + (s as f64 - 0.5) * 0.3
        }
    });
    let unit_mass: f64 = eye_centres
        .iter()
        .map(|&xc| profile_sum(r.size, xc, EYE_HALF_W, |t| 2.0 * lens(t)))
        .sum();
    let eye_aperture = (mass[0] + mass[1]) / (n * n) / unit_mass;

    // brows: vertical centroid
    let brow_cov = Coverage::new(skin, BROW_RGB);
    let (mut w, mut m) = (0.0, 0.0);
    for i in r.range(BROW_BAND.y0, BROW_BAND.y1) {
        let y = r.centre(i);
        for j in r.range(BROW_BAND.x0, BROW_BAND.x1) {
            let x = r.centre(j);
            if eye_centres.iter().all(|&xc| (x - xc).abs() > BROW_HALF_W + 0.01) {
                continue;
            }
            let c = brow_cov.at(r.px(i, j)).max(0.0);
            w += c;
            m += c * y;
        }
    }
    let brow_y = if w > 1e-9 { m / w } else { BROW_Y0 };

    // mouth: total mass, and a weighted fit of column centroids against
    // the expected t^2 of each column
    let mouth_cov = Coverage::new(skin, MOUTH_RGB);
    let mut total = 0.0;
    let mut fit = [0.0; 5]; // sum w, w t, w y, w t t, w t y
    for j in r.range(MOUTH_BOX.x0, MOUTH_BOX.x1) {
        let (mut cm, mut cw, mut cy) = (0.0, 0.0, 0.0);
        for i in r.range(MOUTH_BOX.y0, MOUTH_BOX.y1) {
            let c = mouth_cov.at(r.px(i, j));
            cm += c;
            cw += c.max(0.0);
            cy += c.max(0.0) * r.centre(i);
        }
        total += cm;
        let (mut pw, mut pt) = (0.0, 0.0);
        for dx in SUB {
            let t = ((j as f64 + dx) / n - FACE_C) / MOUTH_HALF_W;
            pw += lens(t);
            pt += lens(t) * t * t;
        }
        if cw > 1e-9 && pw > 0.0 {
            let (t, y) = (pt / pw, cy / cw);
            fit[0] += cw;
            fit[1] += cw * t;
            fit[2] += cw * y;
            fit[3] += cw * t * t;
            fit[4] += cw * t * y;
        }
    }
    let det = fit[0] * fit[3] - fit[1] * fit[1];
    let slope = if det.abs() > 1e-12 {
        (fit[0] * fit[4] - fit[1] * fit[2]) / det
    } else {
        0.0
    };
    let mouth_elevation = -slope;
    let mouth_thickness = total / (n * n) / profile_sum(r.size, FACE_C, MOUTH_HALF_W, lens);

    // cheeks: darkening relative to the forehead
    let mut shaded = 0.0;
    for cx in [FACE_C - CHEEK_DX, FACE_C + CHEEK_DX] {
        let win = Window::new(
            cx - CHEEK_CORE,
            cx + CHEEK_CORE,
            CHEEK_Y - CHEEK_CORE,
            CHEEK_Y + CHEEK_CORE,
        );
        shaded += r.mean(win).iter().sum::<f64>();
    }
    let lit: f64 = skin.iter().sum();
    let cheek_beta = if lit > 1e-6 {
        1.0 - shaded / (2.0 * lit)
    } else {
        0.0
    };

    // face width from the rows through the centre, corrected for the
    // chord falling off within each row
    let bg_cov = Coverage::new(BACKGROUND, skin);
    let rows = r.range(WIDTH_ROWS.0, WIDTH_ROWS.1);
    let mut width = 0.0;
    for i in rows.clone() {
        width += (0..r.size).map(|j| bg_cov.at(r.px(i, j))).sum::<f64>() / n;
    }
    let n_rows = rows.len().max(1) as f64;
    width /= n_rows;
    let mut rx = width / 2.0;
    for _ in 0..4 {
        let ry = FACE_R * FACE_R / rx.max(1e-6);
        let mut k = 0.0;
        for i in rows.clone() {
            for dy in SUB {
                let v = ((i as f64 + dy) / n - FACE_C) / ry;
                k += (1.0 - v * v).max(0.0).sqrt();
            }
        }
        k /= 2.0 * n_rows;
        rx = width / (2.0 * k.max(1e-6));
    }

    Some(Measurements {
        skin,
        eye_aperture,
        eye_centres,
        mouth_elevation,
        mouth_thickness,
        brow_y,
        cheek_beta,
        face_rx: rx,
    })
}

/// Recovers the AU vector of a rendered or generated face, clamped to
/// `[0, 1]`. Unreadable inputs give zeros.
pub fn extract_au(img: &Tensor) -> Vec<f64> {
    let Some(m) = measure(img) else {
        return vec![0.0; N_AU];
    };
    vec![
        clamp01((m.eye_aperture - EYE_B0) / EYE_B1),
        clamp01((m.mouth_elevation - MOUTH_E0) / MOUTH_E1),
        clamp01((m.mouth_thickness - MOUTH_T0) / MOUTH_T1),
        clamp01((BROW_Y0 - m.brow_y) / BROW_DY),
        clamp01((m.cheek_beta - CHEEK_B0) / CHEEK_B1),
    ]
}

/// Normalized identity estimate (hue, aspect, eye spacing, tone), each in
/// `[0, 1]`.
pub fn extract_identity(img: &Tensor) -> Vec<f64> {
    let Some(m) = measure(img) else {
        return vec![0.0; N_IDENTITY];
    };
    let l = m.skin.iter().sum::<f64>() / 3.0 / 0.8;
    let tone = (l - 0.25) / 0.7;
    let hue = if l > 1e-6 {
        let d = m.skin.map(|c| c / l - 0.8);
        let x = d[0] - 0.5 * (d[1] + d[2]);
        let y = 0.75f64.sqrt() * (d[1] - d[2]);
        let mut theta = y.atan2(x);
        if theta < -PI / 6.0 {
            theta += 2.0 * PI;
        } else if theta < 0.0 {
            theta = 0.0;
        }
        theta / HUE_SPAN
    } else {
        0.0
    };
    let aspect = (FACE_R / m.face_rx.max(1e-6)).powi(2);
    let spacing = m.eye_centres[1] - m.eye_centres[0];
    let r = IdentityParams::ranges();
    let norm = |v: f64, (lo, hi): (f64, f64)| clamp01((v - lo) / (hi - lo));
    vec![
        clamp01(hue),
        norm(aspect, r[1]),
        norm(spacing, r[2]),
        norm(tone, r[3]),
    ]
}

/// One line of `labels.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub file: String,
    pub au: Vec<f64>,
    pub identity: Vec<f64>,
    pub id: usize,
}

pub const LABELS_FILE: &str = "labels.jsonl";
pub const IMAGES_DIR: &str = "images";

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Renders `n_people * per_person` faces into `dir/images/NNNNNN.png` and
/// writes `dir/labels.jsonl`. Identity `p` and sample `k` draw from their
/// own seeded streams, so output depends only on the arguments.
pub fn generate_dataset(
    dir: impl AsRef<Path>,
    n_people: usize,
    per_person: usize,
    size: usize,
    seed: u64,
) -> Result<Vec<LabelRecord>> {
    if n_people == 0 || per_person == 0 {
        return Err(invalid(
            "dataset",
            "people and samples per person must be at least 1",
        ));
    }
    let dir = dir.as_ref();
    let images = dir.join(IMAGES_DIR);
    fs::create_dir_all(&images).map_err(io_err(&images))?;
    let labels_path = dir.join(LABELS_FILE);
    let mut labels = std::io::BufWriter::new(fs::File::create(&labels_path).map_err(io_err(&labels_path))?);
    let mut records = Vec::with_capacity(n_people * per_person);
    for person in 0..n_people {
        let identity = IdentityParams::sample(&mut stream_rng(seed, person as u64));
        for k in 0..per_person {
            let index = person * per_person + k;
            let au = sample_au(&mut stream_rng(seed, (1 << 32) + index as u64));
            let file = format!("{IMAGES_DIR}/{index:06}.png");
            imageio::save_png(dir.join(&file), &render_face(&identity, &au, size)?)?;
            let rec = LabelRecord {
                file,
                au: au.to_vec(),
                identity: identity.to_array().to_vec(),
                id: person,
            };
            let line = serde_json::to_string(&rec).expect("label records serialize");
            writeln!(labels, "{line}").map_err(io_err(&labels_path))?;
            records.push(rec);
        }
    }
    labels.flush().map_err(io_err(&labels_path))?;
    Ok(records)
}

pub fn read_labels(dir: impl AsRef<Path>) -> Result<Vec<LabelRecord>> {
    let path = dir.as_ref().join(LABELS_FILE);
    let file = fs::File::open(&path).map_err(io_err(&path))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(&path))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: LabelRecord = serde_json::from_str(&line).map_err(|e| Error::Format {
            path: path.clone(),
            detail: format!("line {}: {e}", n + 1),
        })?;
        out.push(rec);
    }
    Ok(out)
}

/// A dataset held in memory as flat `f32` buffers.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub size: usize,
    pub n_au: usize,
    pub records: Vec<LabelRecord>,
    images: Vec<f32>,
    aus: Vec<f32>,
}

impl Dataset {
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let root = dir.as_ref().to_path_buf();
        let records = read_labels(&root)?;
        let Some(first) = records.first() else {
            return Err(Error::Format {
                path: root.join(LABELS_FILE),
                detail: "no samples".into(),
            });
        };
        let n_au = first.au.len();
        let mut size = 0;
        let mut images = Vec::new();
        let mut aus = Vec::with_capacity(records.len() * n_au);
        for rec in &records {
            let path = root.join(&rec.file);
            let img = imageio::load_png(&path)?;
            let s = img.dim(1);
            if size == 0 {
                size = s;
            }
            if img.dim(2) != s || s != size || rec.au.len() != n_au {
                return Err(Error::Format {
                    path,
                    detail: "samples disagree in image size or AU count".into(),
                });
            }
            images.extend(img.to_vec());
            aus.extend(rec.au.iter().map(|&v| v as f32));
        }
        Ok(Self {
            root,
            size,
            n_au,
            records,
            images,
            aus,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn image(&self, i: usize) -> Tensor {
        let n = 3 * self.size * self.size;
        Tensor::from_vec(
            self.images[i * n..(i + 1) * n].to_vec(),
            &[3, self.size, self.size],
        )
        .expect("image buffer matches its shape")
    }

    pub fn au(&self, i: usize) -> &[f32] {
        &self.aus[i * self.n_au..(i + 1) * self.n_au]
    }

    /// Images `[B, 3, S, S]` and AUs `[B, n_au]` for the given indices.
    pub fn batch(&self, indices: &[usize]) -> (Tensor, Tensor) {
        let n = 3 * self.size * self.size;
        let mut img = Vec::with_capacity(indices.len() * n);
        let mut au = Vec::with_capacity(indices.len() * self.n_au);
        for &i in indices {
            img.extend_from_slice(&self.images[i * n..(i + 1) * n]);
            au.extend_from_slice(self.au(i));
        }
        let b = indices.len();
        (
            Tensor::from_vec(img, &[b, 3, self.size, self.size]).expect("batch shape"),
            Tensor::from_vec(au, &[b, self.n_au]).expect("batch shape"),
        )
    }
}

/// Kolmogorov-Smirnov distance between the sample and U(0, 1).
pub fn ks_uniform(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    v.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = x.clamp(0.0, 1.0);
            f64::max(f - i as f64 / n, (i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}
