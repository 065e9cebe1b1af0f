//! Library side of the `hfedit` command: configuration resolution, run
//! directories and the five subcommands.

pub mod commands;
pub mod eval;
pub mod settings;

use std::fs;
use std::path::{Path, PathBuf};

use hfedit_core::Error;

/// Relative output paths are resolved against this directory when set.
pub const OUT_ROOT_ENV: &str = "HFEDIT_OUT_ROOT";
pub const CONFIG_SNAPSHOT: &str = "config.toml";
pub const VERSION_FILE: &str = "VERSION";

pub fn version_stamp() -> String {
    format!("hfedit {}\n", env!("CARGO_PKG_VERSION"))
}

pub fn resolve_out(path: &Path) -> PathBuf {
    if path.is_absolute() {
        return path.to_path_buf();
    }
    match std::env::var_os(OUT_ROOT_ENV) {
        Some(root) if !root.is_empty() => PathBuf::from(root).join(path),
        _ => path.to_path_buf(),
    }
}

/// Creates `dir` and writes the resolved configuration and version stamp.
pub fn prepare_run_dir(dir: &Path, snapshot: &str) -> hfedit_core::Result<()> {
    let io = |p: &Path| {
        let p = p.to_path_buf();
        move |source| Error::Io { path: p, source }
    };
    fs::create_dir_all(dir).map_err(io(dir))?;
    let cfg = dir.join(CONFIG_SNAPSHOT);
    fs::write(&cfg, snapshot).map_err(io(&cfg))?;
    let ver = dir.join(VERSION_FILE);
    fs::write(&ver, version_stamp()).map_err(io(&ver))?;
    Ok(())
}

/// Short stable tag for each error family.
pub fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::Tensor(_) => "tensor",
        Error::Invalid { .. } => "invalid",
        Error::Io { .. } => "io",
        Error::Format { .. } => "format",
        Error::Checkpoint(_) => "checkpoint",
        Error::NonFinite(_) => "non-finite",
        Error::FeatureNetAccuracy { .. } => "feature-net",
    }
}

/// The single line printed on failure: `hfedit: error[<kind>]: <message>`.
pub fn error_line(e: &Error) -> String {
    let msg = e.to_string().replace(['\n', '\r'], " ");
    format!("hfedit: error[{}]: {msg}", error_kind(e))
}
