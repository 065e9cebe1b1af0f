//! Argument definitions and the subcommand implementations.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use hfedit_core::imageio::{load_png, save_png, save_png_unit, tile};
use hfedit_core::losses::LOG_HEADER;
use hfedit_core::metrics::{train_feature_net_on_renders, FeatureNetTraining};
use hfedit_core::networks::Generator;
use hfedit_core::synthfaces::{extract_au, generate_dataset, Dataset};
use hfedit_core::trainer::{edit, self_reconstruct, TrainState};
use hfedit_core::wavelet::subband_mosaic;
use hfedit_core::{Error, Result, TrainConfig};
use hfedit_tensor::Tensor;
use serde::Serialize;

use crate::eval::{is_feature_shortfall, report, run_pairs};
use crate::settings::{resolve_train_config, TrainOverrides};
use crate::{prepare_run_dir, resolve_out};

pub const LOSS_LOG: &str = "loss.csv";
pub const CHECKPOINTS: &str = "checkpoints";
pub const FINAL_CHECKPOINT: &str = "final";
pub const SAMPLES: &str = "samples";
pub const EPOCH_TIMES: &str = "epochs.csv";
pub const EDIT_GRID: &str = "edit.png";
pub const REPORT: &str = "report.csv";
pub const MOSAIC: &str = "mosaic.png";

#[derive(Debug, Parser)]
#[command(
    name = "hfedit",
    version,
    about = "Facial expression editing with wavelet detail transfer"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a labelled synthetic face dataset.
    Synth(SynthArgs),
    /// Train the generator and critics on a dataset.
    Train(TrainArgs),
    /// Render a strip of edits of one image.
    Edit(EditArgs),
    /// Compute the metric report of a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Write the wavelet subband mosaic of an image.
    Wavelet(WaveletArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 100)]
    pub people: usize,
    #[arg(long, default_value_t = 20)]
    pub per_person: usize,
    /// Image side in pixels (even, at least 32).
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Dataset directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    /// Dataset directory written by `synth`.
    #[arg(long)]
    pub data: PathBuf,
    /// Run directory.
    #[arg(long)]
    pub out: PathBuf,
    /// TOML config file; see the settings module docs for its keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Base preset: desk or paper.
    #[arg(long)]
    pub preset: Option<String>,
    /// Ablation switches, e.g. `no-dit` or `no-dit+no-dh`.
    #[arg(long)]
    pub ablation: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub decay_start_epoch: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub critic_iters: Option<usize>,
    #[arg(long)]
    pub lr: Option<f32>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Continue from the latest epoch checkpoint in the run directory.
    #[arg(long)]
    pub resume: bool,
    /// Stop after this epoch without changing the schedule.
    #[arg(long)]
    pub stop_after: Option<usize>,
    /// Suppress progress lines on stderr.
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct EditArgs {
    /// Checkpoint directory.
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    /// Relative AU deltas `index=value`, comma separated, e.g. `0=0.8,2=-0.5`.
    #[arg(long, conflicts_with = "interp")]
    pub delta: Option<String>,
    /// Two absolute AU vectors `a0,a1,..;b0,b1,..` to interpolate between.
    #[arg(long)]
    pub interp: Option<String>,
    /// Source AUs of the input; measured from the image when omitted.
    #[arg(long)]
    pub source_au: Option<String>,
    #[arg(long, default_value_t = 5)]
    pub steps: usize,
    /// Run directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Run directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Seeds the random pairing of test images.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Evaluate only the first N samples.
    #[arg(long)]
    pub limit: Option<usize>,
    /// Seeds the feature network used for IS and FID.
    #[arg(long, default_value_t = 11)]
    pub feature_seed: u64,
    #[arg(long, default_value_t = 2000)]
    pub feature_samples: usize,
    #[arg(long, default_value_t = 10)]
    pub feature_epochs: usize,
    /// Skip the feature network; IS and FID are reported as unavailable.
    #[arg(long)]
    pub no_feature_net: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct WaveletArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Run directory.
    #[arg(long)]
    pub out: PathBuf,
}

fn io_at(path: &Path) -> impl FnOnce(std::io::Error) -> Error {
    let path = path.to_path_buf();
    move |source| Error::Io { path, source }
}

fn invalid(what: &'static str, detail: impl Into<String>) -> Error {
    Error::Invalid {
        what,
        detail: detail.into(),
    }
}

fn snapshot<T: Serialize>(command: &str, args: &T) -> String {
    let mut table = toml::Table::new();
    table.insert(
        command.into(),
        toml::Value::try_from(args).expect("arguments serialize"),
    );
    toml::to_string_pretty(&table).expect("table serializes")
}

/// Runs a parsed command and returns the paths it wrote.
pub fn run(cli: Cli) -> Result<Vec<PathBuf>> {
    match cli.command {
        Command::Synth(a) => synth(&a),
        Command::Train(a) => train(&a).map(|(dir, _)| vec![dir]),
        Command::Edit(a) => edit_strip(&a),
        Command::Eval(a) => eval(&a).map(|(p, _)| vec![p]),
        Command::Wavelet(a) => wavelet(&a),
    }
}

pub fn synth(a: &SynthArgs) -> Result<Vec<PathBuf>> {
    let out = resolve_out(&a.out);
    generate_dataset(&out, a.people, a.per_person, a.size, a.seed)?;
    prepare_run_dir(&out, &snapshot("synth", a))?;
    Ok(vec![out])
}

/// Training request after config resolution.
#[derive(Debug, Clone)]
pub struct TrainPlan {
    pub data: PathBuf,
    pub out: PathBuf,
    pub cfg: TrainConfig,
    pub resume: bool,
    pub stop_after: Option<usize>,
    pub progress: bool,
}

pub fn train(a: &TrainArgs) -> Result<(PathBuf, TrainState)> {
    let overrides = TrainOverrides {
        preset: a.preset.clone(),
        epochs: a.epochs,
        decay_start_epoch: a.decay_start_epoch,
        batch_size: a.batch_size,
        critic_iters: a.critic_iters,
        lr: a.lr,
        seed: a.seed,
        ablation: a.ablation.clone(),
    };
    let cfg = resolve_train_config(a.config.as_deref(), &overrides)?;
    let plan = TrainPlan {
        data: a.data.clone(),
        out: resolve_out(&a.out),
        cfg,
        resume: a.resume,
        stop_after: a.stop_after,
        progress: !a.quiet,
    };
    let state = run_training(&plan)?;
    Ok((plan.out, state))
}

pub fn epoch_dir(out: &Path, epoch: usize) -> PathBuf {
    out.join(CHECKPOINTS).join(format!("epoch-{epoch:03}"))
}

/// Highest epoch with a saved checkpoint in a run directory.
pub fn latest_epoch(out: &Path) -> Option<usize> {
    fs::read_dir(out.join(CHECKPOINTS))
        .ok()?
        .filter_map(|e| e.ok())
        .filter_map(|e| e.file_name().to_str()?.strip_prefix("epoch-")?.parse().ok())
        .filter(|&n| {
            epoch_dir(out, n)
                .join(hfedit_core::trainer::MANIFEST_FILE)
                .exists()
        })
        .max()
}

/// Inputs over their self-reconstructions, one column per probe sample.
pub fn reconstruction_grid(g: &Generator, probe: &Tensor) -> Result<Tensor> {
    let recon = self_reconstruct(g, probe)?;
    let mut images = hfedit_core::metrics::unbatch(probe)?;
    let cols = images.len();
    images.extend(hfedit_core::metrics::unbatch(&recon)?);
    tile(&images, cols, 0, -1.0)
}

/// Trains per `plan`, saving a checkpoint and sample grid after every
/// epoch. With `resume`, continues from the latest checkpoint, which must
/// carry the same configuration.
pub fn run_training(plan: &TrainPlan) -> Result<TrainState> {
    let out = &plan.out;
    let data = Dataset::load(&plan.data)?;
    let latest = latest_epoch(out);
    let mut state = match (latest, plan.resume) {
        (Some(e), true) => {
            let state = TrainState::load(&epoch_dir(out, e))?;
            if state.cfg != plan.cfg {
                return Err(Error::Checkpoint(format!(
                    "config: {} was trained with a different configuration",
                    epoch_dir(out, e).display()
                )));
            }
            state
        }
        (Some(_), false) => {
            return Err(invalid(
                "run directory",
                format!(
                    "{} already holds checkpoints; pass --resume to continue",
                    out.display()
                ),
            ))
        }
        (None, _) => TrainState::new(plan.cfg.clone())?,
    };
    state.check_dataset(&data)?;
    prepare_run_dir(out, &plan.cfg.to_toml())?;

    let log_path = out.join(LOSS_LOG);
    let mut kept = vec![LOG_HEADER.to_string()];
    if state.step > 0 {
        if let Ok(text) = fs::read_to_string(&log_path) {
            kept.extend(
                text.lines()
                    .skip(1)
                    .filter(|l| {
                        l.split(',')
                            .next()
                            .and_then(|s| s.parse::<u64>().ok())
                            .is_some_and(|s| s <= state.step)
                    })
                    .map(str::to_string),
            );
        }
    }
    fs::write(&log_path, kept.join("\n") + "\n").map_err(io_at(&log_path))?;
    let file = fs::OpenOptions::new()
        .append(true)
        .open(&log_path)
        .map_err(io_at(&log_path))?;
    let mut log = BufWriter::new(file);

    let probe_idx: Vec<usize> = (0..data.len().min(8)).collect();
    let (probe, _) = data.batch(&probe_idx);
    let samples = out.join(SAMPLES);
    fs::create_dir_all(&samples).map_err(io_at(&samples))?;

    let last = plan.stop_after.unwrap_or(plan.cfg.epochs).min(plan.cfg.epochs);
    let (total_steps, _) = hfedit_core::trainer::planned_updates(data.len(), &plan.cfg);
    while state.epoch < last {
        let started = std::time::Instant::now();
        let mut write_err = None;
        state.train_epoch(&data, &mut |r| {
            if let Err(e) = writeln!(log, "{}", r.report.csv_row(r.step, r.epoch)) {
                write_err.get_or_insert(e);
            }
            if plan.progress && r.step % 25 == 0 {
                eprintln!(
                    "epoch {} step {}/{} lr {:.2e} d {:.4} g {}",
                    r.epoch,
                    r.step,
                    total_steps,
                    r.lr,
                    r.report.total_d,
                    r.report.total_g.map_or("-".into(), |g| format!("{g:.4}"))
                );
            }
            Ok(())
        })?;
        if let Some(e) = write_err {
            return Err(io_at(&log_path)(e));
        }
        log.flush().map_err(io_at(&log_path))?;
        state.save(&epoch_dir(out, state.epoch))?;
        let grid = samples.join(format!("epoch-{:03}.png", state.epoch));
        save_png(&grid, &reconstruction_grid(&state.g, &probe)?)?;
        let secs = started.elapsed().as_secs_f64();
        let times = out.join(EPOCH_TIMES);
        let mut rows = fs::read_to_string(&times).unwrap_or_else(|_| "epoch,seconds,step\n".into());
        rows.push_str(&format!("{},{secs:.1},{}\n", state.epoch, state.step));
        fs::write(&times, rows).map_err(io_at(&times))?;
        if plan.progress {
            eprintln!("epoch {} done in {secs:.0}s", state.epoch);
        }
    }
    if state.epoch == plan.cfg.epochs {
        state.save(&out.join(CHECKPOINTS).join(FINAL_CHECKPOINT))?;
    }
    Ok(state)
}

fn parse_vector(text: &str, n: usize, what: &'static str) -> Result<Vec<f32>> {
    let v: Vec<f32> = text
        .split(',')
        .map(|s| s.trim().parse::<f32>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| invalid(what, format!("{text:?}: {e}")))?;
    if v.len() != n {
        return Err(invalid(
            what,
            format!("{} values given, the model uses {n} AUs", v.len()),
        ));
    }
    Ok(v)
}

/// Relative AU vectors for each column of an edit strip.
pub fn sweep(args: &EditArgs, n_au: usize, source: &[f32]) -> Result<Vec<Vec<f32>>> {
    if args.steps == 0 {
        return Err(invalid("steps", "must be at least 1"));
    }
    let steps = args.steps;
    if let Some(spec) = &args.interp {
        let (a, b) = spec
            .split_once(';')
            .ok_or_else(|| invalid("interpolation", "expected two vectors separated by ';'"))?;
        let (a, b) = (
            parse_vector(a, n_au, "interpolation")?,
            parse_vector(b, n_au, "interpolation")?,
        );
        return Ok((0..steps)
            .map(|k| {
                let t = if steps == 1 {
                    0.0
                } else {
                    k as f32 / (steps - 1) as f32
                };
                (0..n_au).map(|i| a[i] + t * (b[i] - a[i]) - source[i]).collect()
            })
            .collect());
    }
    let mut delta = vec![0.0f32; n_au];
    for part in args
        .delta
        .as_deref()
        .unwrap_or("")
        .split(',')
        .filter(|p| !p.trim().is_empty())
    {
        let (k, v) = part
            .split_once('=')
            .ok_or_else(|| invalid("delta", format!("{part:?} is not index=value")))?;
        let k: usize = k
            .trim()
            .parse()
            .map_err(|_| invalid("delta", format!("bad AU index {k:?}")))?;
        if k >= n_au {
            return Err(invalid("delta", format!("AU index {k} out of range 0..{n_au}")));
        }
        delta[k] = v
            .trim()
            .parse()
            .map_err(|_| invalid("delta", format!("bad value {v:?}")))?;
    }
    Ok((1..=steps)
        .map(|k| delta.iter().map(|d| d * k as f32 / steps as f32).collect())
        .collect())
}

pub fn edit_strip(a: &EditArgs) -> Result<Vec<PathBuf>> {
    let state = TrainState::load(&a.ckpt)?;
    let arch = state.cfg.arch.clone();
    let img = load_png(&a.input)?;
    let s = arch.image_size;
    if img.shape() != [3, s, s] {
        return Err(invalid(
            "input image",
            format!("{:?}, the model expects [3, {s}, {s}]", img.shape()),
        ));
    }
    let source: Vec<f32> = match &a.source_au {
        Some(t) => parse_vector(t, arch.n_au, "source AUs")?,
        None => {
            let au = extract_au(&img);
            if au.len() != arch.n_au {
                return Err(invalid(
                    "source AUs",
                    "cannot be measured for this model; pass --source-au",
                ));
            }
            au.iter().map(|&v| v as f32).collect()
        }
    };
    let rels = sweep(a, arch.n_au, &source)?;
    let n = rels.len();
    let x = Tensor::from_vec(img.to_vec().repeat(n), &[n, 3, s, s])?;
    let u = Tensor::from_vec(rels.concat(), &[n, arch.n_au])?;
    let outputs = edit(&state.g, &x, &u)?;
    let mut images = vec![img];
    images.extend(hfedit_core::metrics::unbatch(&outputs)?);
    let out = resolve_out(&a.out);
    prepare_run_dir(&out, &snapshot("edit", a))?;
    let path = out.join(EDIT_GRID);
    save_png(&path, &tile(&images, images.len(), 0, -1.0)?)?;
    Ok(vec![path])
}

pub fn eval(a: &EvalArgs) -> Result<(PathBuf, hfedit_core::metrics::MetricReport)> {
    let state = TrainState::load(&a.ckpt)?;
    let data = Dataset::load(&a.data)?;
    state.check_dataset(&data)?;
    let n = a.limit.unwrap_or(data.len()).min(data.len());
    let out = resolve_out(&a.out);
    prepare_run_dir(&out, &snapshot("eval", a))?;
    let images = run_pairs(&state.g, &data, n, a.seed)?;
    let net = if a.no_feature_net {
        None
    } else {
        let plan = FeatureNetTraining {
            size: data.size,
            n_train: a.feature_samples,
            epochs: a.feature_epochs,
            ..FeatureNetTraining::default()
        };
        match train_feature_net_on_renders(&plan, a.feature_seed) {
            Ok((net, _)) => Some(net),
            Err(e) if is_feature_shortfall(&e) => {
                eprintln!("{}", crate::error_line(&e));
                None
            }
            Err(e) => return Err(e),
        }
    };
    let rep = report(&images, net.as_ref())?;
    let path = out.join(REPORT);
    let text = rep.to_csv(&[("n", n.to_string()), ("seed", a.seed.to_string())]);
    fs::write(&path, text).map_err(io_at(&path))?;
    let strip = out.join("pairs.png");
    let cols = images.inputs.len().min(8);
    let mut shown: Vec<Tensor> = images.inputs[..cols].to_vec();
    shown.extend_from_slice(&images.edited[..cols]);
    shown.extend_from_slice(&images.reconstructed[..cols]);
    save_png(&strip, &tile(&shown, cols, 0, -1.0)?)?;
    Ok((path, rep))
}

pub fn wavelet(a: &WaveletArgs) -> Result<Vec<PathBuf>> {
    let img = load_png(&a.input)?;
    let (h, w) = (img.dim(1), img.dim(2));
    if h % 2 != 0 || w % 2 != 0 {
        return Err(invalid(
            "wavelet input",
            format!("{h}x{w} image; both sides must be even"),
        ));
    }
    let mosaic = subband_mosaic(&img)?;
    let out = resolve_out(&a.out);
    prepare_run_dir(&out, &snapshot("wavelet", a))?;
    let path = out.join(MOSAIC);
    save_png_unit(&path, &mosaic)?;
    Ok(vec![path])
}
