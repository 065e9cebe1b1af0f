//! U-Net generator with an AU-conditioned residual bottleneck and wavelet
//! detail skips, plus the image critic (with AU head) and the
//! high-frequency critic.

use hfedit_tensor::{Activation, Parameter, Tensor};
use rand::Rng;

use crate::config::{Ablation, ArchConfig};
use crate::error::{invalid, Result};
use crate::nn::{Block, Conv, ConvKind, Module, LEAKY_SLOPE};
use crate::wavelet::high_pass_reconstruct;

const LEAKY: Option<Activation> = Some(Activation::LeakyRelu(LEAKY_SLOPE));
const RELU: Option<Activation> = Some(Activation::Relu);

/// Maps an image batch and relative AUs to an edited image batch.
pub trait ImageEditor {
    fn edit(&self, x: &Tensor, u_rel: &Tensor) -> Result<Tensor>;
}

/// Image critic: a patch score map and an AU estimate per sample.
pub trait ImageCritic: Clone {
    fn critique(&self, x: &Tensor) -> Result<(Tensor, Tensor)>;
    /// Same function with constant parameters.
    fn detached(&self) -> Self;
}

/// Critic over high-frequency images.
pub trait DetailCritic: Clone {
    fn score(&self, x_h: &Tensor) -> Result<Tensor>;
    fn detached(&self) -> Self;
}

fn check_images(what: &'static str, x: &Tensor, arch: &ArchConfig) -> Result<usize> {
    let s = arch.image_size;
    let want = [arch.in_channels, s, s];
    if x.rank() != 4 || x.shape()[1..] != want {
        return Err(invalid(
            what,
            format!(
                "expected [n, {}, {s}, {s}], got {:?}",
                arch.in_channels,
                x.shape()
            ),
        ));
    }
    Ok(x.dim(0))
}

/// The AU-conditioned residual bottleneck.
#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)]
pub enum AuFusion {
    /// Three 3×3 convolutions, the AU map concatenated before each.
    Multi { c1: Block, c2: Block, c3: Block },
    /// Single AU-concat convolution (ablation).
    Single { c1: Block },
}

impl AuFusion {
    fn new<R: Rng + ?Sized>(c: usize, n_au: usize, multi: bool, rng: &mut R) -> Self {
        let spec = |c_in| (ConvKind::Forward, c_in, c, 3, 1, 1);
        if multi {
            AuFusion::Multi {
                c1: Block::new("G.fuse.0", spec(c + n_au), true, RELU, rng),
                c2: Block::new("G.fuse.1", spec(c + n_au), true, None, rng),
                c3: Block::new("G.fuse.2", spec(2 * (c + n_au)), true, RELU, rng),
            }
        } else {
            AuFusion::Single {
                c1: Block::new("G.fuse.0", spec(c + n_au), true, RELU, rng),
            }
        }
    }

    /// `z`: `[n, c, h, w]`; `u_rel`: `[n, n_au]`.
    pub fn forward(&self, z: &Tensor, u_rel: &Tensor) -> Result<Tensor> {
        let (n, h, w) = (z.dim(0), z.dim(2), z.dim(3));
        if u_rel.rank() != 2 || u_rel.dim(0) != n {
            return Err(invalid(
                "relative AUs",
                format!("expected [{n}, n_au], got {:?}", u_rel.shape()),
            ));
        }
        let n_au = u_rel.dim(1);
        let a = u_rel.reshape(&[n, n_au, 1, 1])?.broadcast_to(&[n, n_au, h, w])?;
        let za = z.concat_channels(&a)?;
        let branch = match self {
            AuFusion::Multi { c1, c2, c3 } => {
                let h1 = c1.forward(&za)?;
                let h2 = c2.forward(&h1.concat_channels(&a)?)?;
                c3.forward(&za.concat_channels(&h2.concat_channels(&a)?)?)?
            }
            AuFusion::Single { c1 } => c1.forward(&za)?,
        };
        Ok(z.add(&branch)?)
    }

    /// Convolution whose zeroing turns the block into the identity.
    pub fn last_conv_mut(&mut self) -> &mut Conv {
        match self {
            AuFusion::Multi { c3, .. } => &mut c3.conv,
            AuFusion::Single { c1 } => &mut c1.conv,
        }
    }
}

impl Module for AuFusion {
    fn visit(&self, f: &mut dyn FnMut(&Parameter)) {
        match self {
            AuFusion::Multi { c1, c2, c3 } => {
                c1.visit(f);
                c2.visit(f);
                c3.visit(f);
            }
            AuFusion::Single { c1 } => c1.visit(f),
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        match self {
            AuFusion::Multi { c1, c2, c3 } => {
                c1.visit_mut(f);
                c2.visit_mut(f);
                c3.visit_mut(f);
            }
            AuFusion::Single { c1 } => c1.visit_mut(f),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Generator {
    arch: ArchConfig,
    /// Levels actually receiving detail skips (empty when DIT is ablated).
    dit_levels: Vec<usize>,
    pub encoder: Vec<Block>,
    pub fusion: AuFusion,
    pub decoder: Vec<Block>,
    pub head: Block,
}

impl Generator {
    pub fn new<R: Rng + ?Sized>(arch: &ArchConfig, ablation: &Ablation, rng: &mut R) -> Result<Self> {
        arch.validate()?;
        let widths = &arch.channel_widths;
        let l = arch.n_down;
        let mut encoder = vec![Block::new(
            "G.enc.0",
            (ConvKind::Forward, arch.in_channels, widths[0], 7, 1, 3),
            true,
            LEAKY,
            rng,
        )];
        for i in 1..=l {
            encoder.push(Block::new(
                &format!("G.enc.{i}"),
                (ConvKind::Forward, widths[i - 1], widths[i], 4, 2, 1),
                true,
                LEAKY,
                rng,
            ));
        }
        let fusion = AuFusion::new(widths[l], arch.n_au, ablation.use_mul_au, rng);
        let dit_levels: Vec<usize> = if ablation.use_dit {
            arch.dit_levels.clone()
        } else {
            Vec::new()
        };
        let mut decoder = Vec::with_capacity(l);
        let mut c_prev = widths[l];
        for i in 0..l {
            let level = l - i;
            let c_in = if i > 0 && dit_levels.contains(&level) {
                c_prev + widths[level]
            } else {
                c_prev
            };
            let c_out = widths[level - 1];
            decoder.push(Block::new(
                &format!("G.dec.{i}"),
                (ConvKind::Transpose, c_in, c_out, 4, 2, 1),
                true,
                RELU,
                rng,
            ));
            c_prev = c_out;
        }
        let head = Block::new(
            "G.out",
            (ConvKind::Forward, widths[0], arch.in_channels, 7, 1, 3),
            false,
            Some(Activation::Tanh),
            rng,
        );
        Ok(Generator {
            arch: arch.clone(),
            dit_levels,
            encoder,
            fusion,
            decoder,
            head,
        })
    }

    pub fn arch(&self) -> &ArchConfig {
        &self.arch
    }

    pub fn dit_levels(&self) -> &[usize] {
        &self.dit_levels
    }

    /// Forward pass that also returns the tensors concatenated into the
    /// decoder by the detail skips, outermost decoder stage last.
    pub fn forward_with_skips(&self, x: &Tensor, u_rel: &Tensor) -> Result<(Tensor, Vec<Tensor>)> {
        let n = check_images("generator input", x, &self.arch)?;
        if u_rel.shape() != [n, self.arch.n_au] {
            return Err(invalid(
                "relative AUs",
                format!("expected [{n}, {}], got {:?}", self.arch.n_au, u_rel.shape()),
            ));
        }
        let mut feats = Vec::with_capacity(self.encoder.len());
        let mut h = x.clone();
        for block in &self.encoder {
            h = block.forward(&h)?;
            feats.push(h.clone());
        }
        let l = self.arch.n_down;
        let mut d = self.fusion.forward(&feats[l], u_rel)?;
        let mut skips = Vec::new();
        for (i, block) in self.decoder.iter().enumerate() {
            let level = l - i;
            if i > 0 && self.dit_levels.contains(&level) {
                let skip = high_pass_reconstruct(&feats[level])?;
                d = d.concat_channels(&skip)?;
                skips.push(skip);
            }
            d = block.forward(&d)?;
        }
        Ok((self.head.forward(&d)?, skips))
    }

    pub fn forward(&self, x: &Tensor, u_rel: &Tensor) -> Result<Tensor> {
        Ok(self.forward_with_skips(x, u_rel)?.0)
    }
}

impl ImageEditor for Generator {
    fn edit(&self, x: &Tensor, u_rel: &Tensor) -> Result<Tensor> {
        self.forward(x, u_rel)
    }
}

impl Module for Generator {
    fn visit(&self, f: &mut dyn FnMut(&Parameter)) {
        self.encoder.visit(f);
        self.fusion.visit(f);
        self.decoder.visit(f);
        self.head.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        self.encoder.visit_mut(f);
        self.fusion.visit_mut(f);
        self.decoder.visit_mut(f);
        self.head.visit_mut(f);
    }
}

fn critic_trunk<R: Rng + ?Sized>(prefix: &str, arch: &ArchConfig, rng: &mut R) -> (Vec<Block>, usize) {
    let mut trunk = Vec::new();
    let mut c_in = arch.in_channels;
    let mut c_out = arch.d_base_width;
    for i in 0..arch.d_trunk_depth() {
        trunk.push(Block::new(
            &format!("{prefix}.trunk.{i}"),
            (ConvKind::Forward, c_in, c_out, 4, 2, 1),
            true,
            LEAKY,
            rng,
        ));
        c_in = c_out;
        c_out *= 2;
    }
    (trunk, c_in)
}

fn run_trunk(trunk: &[Block], x: &Tensor) -> Result<Tensor> {
    let mut h = x.clone();
    for b in trunk {
        h = b.forward(&h)?;
    }
    Ok(h)
}

/// Image critic: shared stride-2 trunk, then a 3×3 patch critic head and an
/// AU regression head whose kernel spans the final 2×2 map.
#[derive(Debug, Clone)]
pub struct DiscriminatorI {
    arch: ArchConfig,
    pub trunk: Vec<Block>,
    pub critic: Conv,
    pub au_head: Conv,
}

impl DiscriminatorI {
    pub fn new<R: Rng + ?Sized>(arch: &ArchConfig, rng: &mut R) -> Result<Self> {
        arch.validate()?;
        let (trunk, c) = critic_trunk("DI", arch, rng);
        let critic = Conv::new("DI.critic", ConvKind::Forward, c, 1, 3, 1, 1, true, rng);
        let au_head = Conv::new("DI.au", ConvKind::Forward, c, arch.n_au, 2, 1, 0, true, rng);
        Ok(DiscriminatorI {
            arch: arch.clone(),
            trunk,
            critic,
            au_head,
        })
    }

    /// Score map `[n, 1, 2, 2]` and AU estimate `[n, n_au]`.
    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let n = check_images("image critic input", x, &self.arch)?;
        let h = run_trunk(&self.trunk, x)?;
        let score = self.critic.forward(&h)?;
        let au = self.au_head.forward(&h)?.reshape(&[n, self.arch.n_au])?;
        Ok((score, au))
    }
}

impl ImageCritic for DiscriminatorI {
    fn critique(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        self.forward(x)
    }

    fn detached(&self) -> Self {
        self.frozen()
    }
}

impl Module for DiscriminatorI {
    fn visit(&self, f: &mut dyn FnMut(&Parameter)) {
        self.trunk.visit(f);
        self.critic.visit(f);
        self.au_head.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        self.trunk.visit_mut(f);
        self.critic.visit_mut(f);
        self.au_head.visit_mut(f);
    }
}

/// High-frequency critic: stride-2 trunk and a 3×3 score head.
#[derive(Debug, Clone)]
pub struct DiscriminatorH {
    arch: ArchConfig,
    pub trunk: Vec<Block>,
    pub critic: Conv,
}

impl DiscriminatorH {
    pub fn new<R: Rng + ?Sized>(arch: &ArchConfig, rng: &mut R) -> Result<Self> {
        arch.validate()?;
        let (trunk, c) = critic_trunk("DH", arch, rng);
        let critic = Conv::new("DH.critic", ConvKind::Forward, c, 1, 3, 1, 1, true, rng);
        Ok(DiscriminatorH {
            arch: arch.clone(),
            trunk,
            critic,
        })
    }

    pub fn forward(&self, x_h: &Tensor) -> Result<Tensor> {
        check_images("high-frequency critic input", x_h, &self.arch)?;
        self.critic.forward(&run_trunk(&self.trunk, x_h)?)
    }
}

impl DetailCritic for DiscriminatorH {
    fn score(&self, x_h: &Tensor) -> Result<Tensor> {
        self.forward(x_h)
    }

    fn detached(&self) -> Self {
        self.frozen()
    }
}

impl Module for DiscriminatorH {
    fn visit(&self, f: &mut dyn FnMut(&Parameter)) {
        self.trunk.visit(f);
        self.critic.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        self.trunk.visit_mut(f);
        self.critic.visit_mut(f);
    }
}
