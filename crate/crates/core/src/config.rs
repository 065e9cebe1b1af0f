//! Architecture and training hyperparameters, with `paper` and `desk` presets.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchConfig {
    pub image_size: usize,
    pub in_channels: usize,
    /// Stride-2 encoder stages after the full-resolution stem.
    pub n_down: usize,
    /// Encoder width per level, stem first; `n_down + 1` entries.
    pub channel_widths: Vec<usize>,
    pub n_au: usize,
    /// Encoder levels whose detail bands are forwarded to the decoder.
    pub dit_levels: Vec<usize>,
    /// Width of the first discriminator convolution; doubles per stage.
    pub d_base_width: usize,
}

impl ArchConfig {
    pub fn paper() -> Self {
        ArchConfig {
            image_size: 128,
            in_channels: 3,
            n_down: 5,
            channel_widths: vec![64, 128, 256, 512, 512, 512],
            n_au: 17,
            dit_levels: vec![1, 2, 3],
            d_base_width: 64,
        }
    }

    pub fn desk() -> Self {
        ArchConfig {
            image_size: 64,
            in_channels: 3,
            n_down: 4,
            channel_widths: vec![16, 32, 64, 128, 128],
            n_au: 5,
            dit_levels: vec![1, 2, 3],
            d_base_width: 16,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "paper" => Ok(Self::paper()),
            "desk" => Ok(Self::desk()),
            other => Err(invalid(
                "preset",
                format!("unknown preset {other:?} (paper, desk)"),
            )),
        }
    }

    pub fn bottleneck_size(&self) -> usize {
        self.image_size >> self.n_down
    }

    /// Stride-2 stages in each discriminator trunk (down to a 2×2 map).
    pub fn d_trunk_depth(&self) -> usize {
        (self.image_size / 2).trailing_zeros() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let what = "architecture";
        if self.image_size == 0 || !self.image_size.is_power_of_two() {
            return Err(invalid(
                what,
                format!("image_size {} must be a power of two", self.image_size),
            ));
        }
        if self.image_size < 4 << self.n_down {
            return Err(invalid(
                what,
                format!(
                    "image_size {} / 2^{} leaves a bottleneck smaller than 4x4",
                    self.image_size, self.n_down
                ),
            ));
        }
        if self.channel_widths.len() != self.n_down + 1 {
            return Err(invalid(
                what,
                format!(
                    "channel_widths has {} entries, expected n_down + 1 = {}",
                    self.channel_widths.len(),
                    self.n_down + 1
                ),
            ));
        }
        if self.channel_widths.contains(&0) || self.in_channels == 0 || self.n_au == 0 {
            return Err(invalid(what, "widths, in_channels and n_au must be positive"));
        }
        for &l in &self.dit_levels {
            if l == 0 || l >= self.n_down {
                return Err(invalid(
                    what,
                    format!(
                        "dit level {l} outside 1..{} (levels a decoder stage can receive)",
                        self.n_down
                    ),
                ));
            }
        }
        if self.d_base_width == 0 {
            return Err(invalid(what, "d_base_width must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ablation {
    /// Full three-convolution AU fusion block; otherwise one AU-concat conv.
    pub use_mul_au: bool,
    /// Wavelet detail skips from encoder to decoder.
    pub use_dit: bool,
    /// High-frequency critic.
    pub use_dh: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Ablation {
            use_mul_au: true,
            use_dit: true,
            use_dh: true,
        }
    }
}

impl Ablation {
    /// Parses `full`, `no-dit`, `no-dh`, `no-mul-au`, or a `+`-joined
    /// combination such as `no-dit+no-dh`.
    pub fn parse(spec: &str) -> Result<Self> {
        let mut a = Ablation::default();
        for part in spec.split('+').map(str::trim) {
            match part {
                "full" | "" => {}
                "no-dit" => a.use_dit = false,
                "no-dh" => a.use_dh = false,
                "no-mul-au" => a.use_mul_au = false,
                other => {
                    return Err(invalid(
                        "ablation",
                        format!("unknown switch {other:?} (full, no-dit, no-dh, no-mul-au)"),
                    ))
                }
            }
        }
        Ok(a)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_gp: f32,
    /// Critic AU regression.
    pub lambda1: f32,
    /// Generator AU regression.
    pub lambda2: f32,
    /// Reconstruction.
    pub lambda3: f32,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_gp: 10.0,
            lambda1: 150.0,
            lambda2: 150.0,
            lambda3: 30.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.lambda_gp, self.lambda1, self.lambda2, self.lambda3];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(invalid(
                "loss weights",
                format!("must be finite and nonnegative: {self:?}"),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub epochs: usize,
    /// Epoch (1-based) where the linear decay begins; it still runs at `lr`.
    pub decay_start_epoch: usize,
    /// Critic updates per generator update.
    pub critic_iters: usize,
    pub seed: u64,
    pub weights: LossWeights,
    pub arch: ArchConfig,
    pub ablation: Ablation,
}

impl TrainConfig {
    pub fn paper() -> Self {
        TrainConfig {
            batch_size: 16,
            lr: 1e-4,
            beta1: 0.5,
            beta2: 0.999,
            epochs: 50,
            decay_start_epoch: 31,
            critic_iters: 4,
            seed: 0,
            weights: LossWeights::default(),
            arch: ArchConfig::paper(),
            ablation: Ablation::default(),
        }
    }

    pub fn desk() -> Self {
        TrainConfig {
            epochs: 20,
            decay_start_epoch: 11,
            arch: ArchConfig::desk(),
            ..Self::paper()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "paper" => Ok(Self::paper()),
            "desk" => Ok(Self::desk()),
            other => Err(invalid(
                "preset",
                format!("unknown preset {other:?} (paper, desk)"),
            )),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        self.weights.validate()?;
        let what = "training config";
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(invalid(what, "batch_size and epochs must be positive"));
        }
        if self.critic_iters == 0 {
            return Err(invalid(what, "critic_iters must be at least 1"));
        }
        if self.decay_start_epoch == 0 || self.decay_start_epoch > self.epochs {
            return Err(invalid(
                what,
                format!(
                    "decay_start_epoch {} must lie in 1..={}",
                    self.decay_start_epoch, self.epochs
                ),
            ));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(invalid(what, format!("lr {} must be positive", self.lr)));
        }
        for b in [self.beta1, self.beta2] {
            if !(0.0..1.0).contains(&b) {
                return Err(invalid(what, format!("Adam beta {b} outside [0, 1)")));
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| invalid("config file", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}
