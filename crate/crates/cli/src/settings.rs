//! Training configuration files.
//!
//! A config file is TOML holding any subset of the training fields, with an
//! optional top-level `preset` naming the base (`desk` when absent):
//!
//! ```toml
//! preset = "desk"
//! epochs = 10
//! seed = 3
//!
//! [arch]
//! dit_levels = [1, 2]
//!
//! [weights]
//! lambda_gp = 10.0
//!
//! [ablation]
//! use_dh = false
//! ```
//!
//! Fields: `batch_size`, `lr`, `beta1`, `beta2`, `epochs`,
//! `decay_start_epoch`, `critic_iters`, `seed`; `[arch]` with `image_size`,
//! `in_channels`, `n_down`, `channel_widths`, `n_au`, `dit_levels`,
//! `d_base_width`; `[weights]` with `lambda_gp`, `lambda1`, `lambda2`,
//! `lambda3`; `[ablation]` with `use_mul_au`, `use_dit`, `use_dh`. Unknown
//! keys are rejected. Command-line flags override the file, and the merged
//! result is written to the run directory.

use std::path::Path;

use hfedit_core::{Ablation, Error, Result, TrainConfig};
use toml::{Table, Value};

/// Flag-level overrides, applied after the file.
#[derive(Debug, Clone, Default)]
pub struct TrainOverrides {
    pub preset: Option<String>,
    pub epochs: Option<usize>,
    pub decay_start_epoch: Option<usize>,
    pub batch_size: Option<usize>,
    pub critic_iters: Option<usize>,
    pub lr: Option<f32>,
    pub seed: Option<u64>,
    pub ablation: Option<String>,
}

fn format_err(path: &Path, detail: impl ToString) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        detail: detail.to_string(),
    }
}

fn merge(base: &mut Table, over: Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

pub fn resolve_train_config(file: Option<&Path>, o: &TrainOverrides) -> Result<TrainConfig> {
    let mut layer = Table::new();
    let mut file_preset = None;
    let source = file.unwrap_or(Path::new("<flags>"));
    if let Some(path) = file {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        layer = text.parse::<Table>().map_err(|e| format_err(path, e))?;
        match layer.remove("preset") {
            Some(Value::String(p)) => file_preset = Some(p),
            Some(other) => return Err(format_err(path, format!("preset must be a string, got {other}"))),
            None => {}
        }
    }
    let preset = o.preset.clone().or(file_preset).unwrap_or_else(|| "desk".into());
    let mut table = Table::try_from(TrainConfig::preset(&preset)?).expect("config is a table");
    merge(&mut table, layer);

    let mut flags = Table::new();
    let mut set = |k: &str, v: Option<Value>| {
        if let Some(v) = v {
            flags.insert(k.into(), v);
        }
    };
    set("epochs", o.epochs.map(|v| Value::Integer(v as i64)));
    set(
        "decay_start_epoch",
        o.decay_start_epoch.map(|v| Value::Integer(v as i64)),
    );
    set("batch_size", o.batch_size.map(|v| Value::Integer(v as i64)));
    set("critic_iters", o.critic_iters.map(|v| Value::Integer(v as i64)));
    set("lr", o.lr.map(|v| Value::Float(v as f64)));
    set("seed", o.seed.map(|v| Value::Integer(v as i64)));
    if let Some(a) = &o.ablation {
        let a = Ablation::parse(a)?;
        set("ablation", Some(Value::try_from(a).expect("ablation is a table")));
    }
    merge(&mut table, flags);

    let cfg: TrainConfig = Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| format_err(source, e))?;
    cfg.validate()?;
    Ok(cfg)
}
