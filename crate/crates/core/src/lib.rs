//! Wavelet-conditioned facial expression editing at desk scale.
//!
//! The generator is a U-Net whose encoder features reach the decoder only
//! through their wavelet detail bands, with relative action-unit (AU)
//! intensities injected at the bottleneck. Two critics judge realism: one
//! on images (with an AU regression head) and one on high-frequency
//! re-syntheses. Training data comes from a procedural face renderer whose
//! expression and identity parameters can be read back analytically.

pub mod config;
pub mod error;
pub mod imageio;
pub mod losses;
pub mod metrics;
pub mod networks;
pub mod nn;
pub mod optim;
pub mod synthfaces;
pub mod trainer;
pub mod wavelet;

pub use config::{Ablation, ArchConfig, LossWeights, TrainConfig};
pub use error::{Error, Result};
