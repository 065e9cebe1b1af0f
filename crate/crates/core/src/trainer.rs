//! Alternating critic/generator training, the learning-rate schedule and
//! checkpoints.
//!
//! A checkpoint is a directory holding `manifest.json` (configuration,
//! counters and a tensor index) and `params.bin`, every indexed tensor as
//! little-endian `f32` in index order. Optimizer moments are stored as
//! ordinary indexed tensors after the model parameters.

use std::fs;
use std::io::Write;
use std::path::Path;

use hfedit_tensor::{no_grad, Parameter, Tensor};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::TrainConfig;
use crate::error::{invalid, io_err, Error, Result};
use crate::losses::{d_losses, g_losses, LossReport, PenaltyDraws};
use crate::networks::{DiscriminatorH, DiscriminatorI, Generator};
use crate::nn::Module;
use crate::optim::{lr_at, Adam};
use crate::synthfaces::Dataset;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const PARAMS_FILE: &str = "params.bin";
pub const CHECKPOINT_FORMAT: &str = "hfedit-checkpoint/1";

/// Seeds parameter initialisation; batch streams use the step and epoch.
const INIT_STREAM: u64 = 0;
const SHUFFLE_STREAM_BASE: u64 = 1 << 40;

/// Both critics as one parameter set, so they share a single optimizer.
#[derive(Debug, Clone)]
pub struct Critics {
    pub d_i: DiscriminatorI,
    pub d_h: Option<DiscriminatorH>,
}

impl Module for Critics {
    fn visit(&self, f: &mut dyn FnMut(&Parameter)) {
        self.d_i.visit(f);
        if let Some(d_h) = &self.d_h {
            d_h.visit(f);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        self.d_i.visit_mut(f);
        if let Some(d_h) = &mut self.d_h {
            d_h.visit_mut(f);
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainState {
    pub cfg: TrainConfig,
    pub g: Generator,
    pub critics: Critics,
    pub opt_g: Adam,
    pub opt_d: Adam,
    /// Iterations completed over the whole run.
    pub step: u64,
    /// Epochs completed.
    pub epoch: usize,
    pub g_updates: u64,
    pub d_updates: u64,
}

/// One logged iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    /// 1-based global iteration number.
    pub step: u64,
    /// 1-based epoch.
    pub epoch: usize,
    pub lr: f64,
    pub report: LossReport,
}

fn step_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

impl TrainState {
    /// Freshly initialised models and empty optimizer state.
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = step_rng(cfg.seed, INIT_STREAM);
        let g = Generator::new(&cfg.arch, &cfg.ablation, &mut rng)?;
        let d_i = DiscriminatorI::new(&cfg.arch, &mut rng)?;
        let d_h = if cfg.ablation.use_dh {
            Some(DiscriminatorH::new(&cfg.arch, &mut rng)?)
        } else {
            None
        };
        let (b1, b2) = (cfg.beta1 as f64, cfg.beta2 as f64);
        Ok(TrainState {
            g,
            critics: Critics { d_i, d_h },
            opt_g: Adam::new(b1, b2),
            opt_d: Adam::new(b1, b2),
            step: 0,
            epoch: 0,
            g_updates: 0,
            d_updates: 0,
            cfg,
        })
    }

    pub fn check_dataset(&self, data: &Dataset) -> Result<()> {
        let arch = &self.cfg.arch;
        if data.is_empty() {
            return Err(invalid(
                "dataset",
                format!("{} holds no samples", data.root.display()),
            ));
        }
        if data.n_au != arch.n_au {
            return Err(invalid(
                "dataset",
                format!(
                    "{} AUs per sample but the architecture expects {}",
                    data.n_au, arch.n_au
                ),
            ));
        }
        if data.size != arch.image_size {
            return Err(invalid(
                "dataset",
                format!(
                    "{}px images but the architecture expects {}px",
                    data.size, arch.image_size
                ),
            ));
        }
        Ok(())
    }

    /// One iteration on source samples `idx` with targets `tgt`: a critic
    /// update, then a generator update on every `critic_iters`-th iteration.
    pub fn train_step<R: Rng + ?Sized>(
        &mut self,
        data: &Dataset,
        idx: &[usize],
        tgt: &[usize],
        lr: f64,
        rng: &mut R,
    ) -> Result<LossReport> {
        let (x, u_x) = data.batch(idx);
        let (_, u_y) = data.batch(tgt);
        let u_rel = u_y.sub(&u_x)?;
        let w = self.cfg.weights;
        let draws = PenaltyDraws::sample(idx.len(), rng);

        let x_prime = no_grad(|| self.g.forward(&x, &u_rel))?;
        let d = d_losses(
            &self.critics.d_i,
            self.critics.d_h.as_ref(),
            &x,
            &x_prime,
            &u_x,
            &w,
            &draws,
        )?;
        let g_turn = self.step % self.cfg.critic_iters as u64 == self.cfg.critic_iters as u64 - 1;
        let report = if d.total.item().is_finite() {
            self.critics.zero_grad();
            d.total.backward()?;
            self.opt_d.step(&mut self.critics, lr)?;
            self.d_updates += 1;
            if g_turn {
                let g = g_losses(
                    &self.g,
                    &self.critics.d_i,
                    self.critics.d_h.as_ref(),
                    &x,
                    &u_x,
                    &u_y,
                    &w,
                )?;
                let report = LossReport::new(&d, Some(&g));
                if report.is_finite() {
                    self.g.zero_grad();
                    g.total.backward()?;
                    self.opt_g.step(&mut self.g, lr)?;
                    self.g_updates += 1;
                }
                report
            } else {
                LossReport::new(&d, None)
            }
        } else {
            LossReport::new(&d, None)
        };
        self.step += 1;
        Ok(report)
    }

    /// Runs the next epoch. Each iteration draws its target samples and
    /// penalty weights from a stream keyed by the global step, so a resumed
    /// run continues exactly where it stopped. A non-finite loss aborts with
    /// the offending batch.
    pub fn train_epoch(
        &mut self,
        data: &Dataset,
        on_step: &mut dyn FnMut(&StepRecord) -> Result<()>,
    ) -> Result<()> {
        self.run_epoch(data, None, on_step)
    }

    /// The first `steps` iterations of the next epoch, exactly as
    /// [`train_epoch`](Self::train_epoch) would run them. The epoch is left
    /// unfinished, so the state is only good for inspection or saving.
    pub fn train_partial_epoch(
        &mut self,
        data: &Dataset,
        steps: usize,
        on_step: &mut dyn FnMut(&StepRecord) -> Result<()>,
    ) -> Result<()> {
        self.run_epoch(data, Some(steps), on_step)
    }

    fn run_epoch(
        &mut self,
        data: &Dataset,
        limit: Option<usize>,
        on_step: &mut dyn FnMut(&StepRecord) -> Result<()>,
    ) -> Result<()> {
        self.check_dataset(data)?;
        let epoch = self.epoch + 1;
        if epoch > self.cfg.epochs {
            return Err(invalid(
                "training",
                format!("all {} epochs already completed", self.cfg.epochs),
            ));
        }
        let lr = lr_at(epoch, &self.cfg);
        let seed = self.cfg.seed;
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut step_rng(seed, SHUFFLE_STREAM_BASE + epoch as u64));
        let batches: Vec<&[usize]> = order.chunks(self.cfg.batch_size).collect();
        let n = limit.map_or(batches.len(), |l| l.min(batches.len()));
        for idx in &batches[..n] {
            let mut rng = step_rng(seed, self.step + 1);
            let tgt: Vec<usize> = idx.iter().map(|_| rng.gen_range(0..data.len())).collect();
            let step = self.step + 1;
            let report = self
                .train_step(data, idx, &tgt, lr, &mut rng)
                .map_err(|e| match e {
                    Error::NonFinite(what) => Error::NonFinite(format!(
                        "{what} at step {step} (epoch {epoch}, seed {seed}); batch {idx:?}, targets {tgt:?}"
                    )),
                    other => other,
                })?;
            if !report.is_finite() {
                return Err(Error::NonFinite(format!(
                    "loss at step {step} (epoch {epoch}, seed {seed}): {}; batch {idx:?}, targets {tgt:?}",
                    report.csv_row(step, epoch)
                )));
            }
            on_step(&StepRecord {
                step,
                epoch,
                lr,
                report,
            })?;
        }
        if n == batches.len() {
            self.epoch = epoch;
        }
        Ok(())
    }

    /// Every checkpointed tensor in storage order.
    fn tensors(&self) -> Vec<(String, Vec<usize>, Vec<f32>)> {
        let mut out = Vec::new();
        let push_module = |m: &dyn ModuleRef, out: &mut Vec<_>| {
            m.each(&mut |p| out.push((p.name().to_string(), p.shape().to_vec(), p.tensor().to_vec())));
        };
        push_module(&self.g, &mut out);
        push_module(&self.critics, &mut out);
        for (tag, opt, module) in [
            ("opt.G", &self.opt_g, &self.g as &dyn ModuleRef),
            ("opt.D", &self.opt_d, &self.critics as &dyn ModuleRef),
        ] {
            let mut k = 0;
            module.each(&mut |p| {
                for (moment, store) in [("m", &opt.m), ("v", &opt.v)] {
                    let data = store.get(k).cloned().unwrap_or_else(|| vec![0.0; p.numel()]);
                    out.push((format!("{tag}.{moment}.{}", p.name()), p.shape().to_vec(), data));
                }
                k += 1;
            });
        }
        out
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let tensors = self.tensors();
        let mut index = Vec::with_capacity(tensors.len());
        let mut blob = Vec::new();
        for (name, shape, data) in tensors {
            index.push(TensorEntry {
                name,
                shape,
                offset: blob.len() as u64,
            });
            for v in data {
                blob.extend_from_slice(&v.to_le_bytes());
            }
        }
        let manifest = Manifest {
            format: CHECKPOINT_FORMAT.into(),
            arch: self.cfg.arch.clone(),
            config: self.cfg.clone(),
            step: self.step,
            epoch: self.epoch,
            g_updates: self.g_updates,
            d_updates: self.d_updates,
            adam_t: [self.opt_g.t, self.opt_d.t],
            tensors: index,
        };
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        let manifest_path = dir.join(MANIFEST_FILE);
        fs::write(&manifest_path, text + "\n").map_err(io_err(&manifest_path))?;
        let params_path = dir.join(PARAMS_FILE);
        let mut f = fs::File::create(&params_path).map_err(io_err(&params_path))?;
        f.write_all(&blob).map_err(io_err(&params_path))?;
        Ok(())
    }

    /// Rebuilds a state from a checkpoint directory.
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest = read_manifest(dir)?;
        let mut state = TrainState::new(manifest.config.clone())?;
        state.load_into(dir, &manifest)?;
        Ok(state)
    }

    /// Overwrites this state's parameters and counters from a checkpoint
    /// whose tensor inventory must match this state's exactly.
    pub fn restore(&mut self, dir: &Path) -> Result<()> {
        let manifest = read_manifest(dir)?;
        self.load_into(dir, &manifest)
    }

    fn load_into(&mut self, dir: &Path, manifest: &Manifest) -> Result<()> {
        let expected = self.tensors();
        for (i, (name, shape, _)) in expected.iter().enumerate() {
            let Some(entry) = manifest.tensors.get(i) else {
                return Err(Error::Checkpoint(format!("{name}: missing from the checkpoint")));
            };
            if &entry.name != name || &entry.shape != shape {
                return Err(Error::Checkpoint(format!(
                    "{name}: model expects {shape:?}, checkpoint entry {i} is {} {:?}",
                    entry.name, entry.shape
                )));
            }
        }
        if let Some(extra) = manifest.tensors.get(expected.len()) {
            return Err(Error::Checkpoint(format!(
                "{}: not part of the model",
                extra.name
            )));
        }
        let params_path = dir.join(PARAMS_FILE);
        let blob = fs::read(&params_path).map_err(io_err(&params_path))?;
        let want: usize = expected.iter().map(|(_, _, d)| d.len() * 4).sum();
        if blob.len() != want {
            return Err(Error::Format {
                path: params_path,
                detail: format!("{} bytes, manifest describes {want}", blob.len()),
            });
        }
        let mut values = Vec::with_capacity(expected.len());
        let mut offset = 0usize;
        for ((name, _, d), entry) in expected.iter().zip(&manifest.tensors) {
            if entry.offset != offset as u64 {
                return Err(Error::Checkpoint(format!(
                    "{name}: offset {} where {offset} was expected",
                    entry.offset
                )));
            }
            let bytes = &blob[offset..offset + d.len() * 4];
            values.push(
                bytes
                    .chunks_exact(4)
                    .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                    .collect::<Vec<f32>>(),
            );
            offset += d.len() * 4;
        }

        let mut values = values.into_iter();
        let set = |m: &mut dyn ModuleMut, values: &mut dyn Iterator<Item = Vec<f32>>| -> Result<usize> {
            let mut n = 0;
            let mut result = Ok(());
            m.each_mut(&mut |p| {
                n += 1;
                if let Err(e) = p.set_data(values.next().expect("inventory checked")) {
                    result = Err(e);
                }
            });
            result?;
            Ok(n)
        };
        let n_g = set(&mut self.g, &mut values)?;
        let n_d = set(&mut self.critics, &mut values)?;
        for (opt, n, t) in [
            (&mut self.opt_g, n_g, manifest.adam_t[0]),
            (&mut self.opt_d, n_d, manifest.adam_t[1]),
        ] {
            opt.m.clear();
            opt.v.clear();
            for _ in 0..n {
                let (m, v) = (
                    values.next().expect("inventory checked"),
                    values.next().expect("inventory checked"),
                );
                if t > 0 {
                    opt.m.push(m);
                    opt.v.push(v);
                }
            }
            opt.t = t;
        }
        self.step = manifest.step;
        self.epoch = manifest.epoch;
        self.g_updates = manifest.g_updates;
        self.d_updates = manifest.d_updates;
        Ok(())
    }
}

// Object-safe views of `Module` used while walking the inventory.
trait ModuleRef {
    fn each(&self, f: &mut dyn FnMut(&Parameter));
}

trait ModuleMut {
    fn each_mut(&mut self, f: &mut dyn FnMut(&mut Parameter));
}

impl<M: Module> ModuleRef for M {
    fn each(&self, f: &mut dyn FnMut(&Parameter)) {
        self.visit(f)
    }
}

impl<M: Module> ModuleMut for M {
    fn each_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        self.visit_mut(f)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into `params.bin`.
    pub offset: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub arch: crate::config::ArchConfig,
    pub config: TrainConfig,
    pub step: u64,
    pub epoch: usize,
    pub g_updates: u64,
    pub d_updates: u64,
    /// Completed Adam steps for the generator and the critics.
    pub adam_t: [u64; 2],
    pub tensors: Vec<TensorEntry>,
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let m: Manifest = serde_json::from_str(&text).map_err(|e| Error::Format {
        path: path.clone(),
        detail: e.to_string(),
    })?;
    if m.format != CHECKPOINT_FORMAT {
        return Err(Error::Format {
            path,
            detail: format!("format {:?}, expected {CHECKPOINT_FORMAT:?}", m.format),
        });
    }
    if m.arch != m.config.arch {
        return Err(Error::Checkpoint(
            "arch: differs from the embedded training config".into(),
        ));
    }
    Ok(m)
}

/// Self-reconstructions `G(x, 0)` without recording a graph.
pub fn self_reconstruct(g: &Generator, x: &Tensor) -> Result<Tensor> {
    let zero = Tensor::zeros(&[x.dim(0), g.arch().n_au]);
    no_grad(|| g.forward(x, &zero))
}

/// Edits `x` by `u_rel` without recording a graph.
pub fn edit(g: &Generator, x: &Tensor, u_rel: &Tensor) -> Result<Tensor> {
    no_grad(|| g.forward(x, u_rel))
}

/// Iterations and generator updates of a complete run over `n_samples`.
pub fn planned_updates(n_samples: usize, cfg: &TrainConfig) -> (u64, u64) {
    let steps = (cfg.epochs * n_samples.div_ceil(cfg.batch_size)) as u64;
    (steps, steps / cfg.critic_iters as u64)
}
