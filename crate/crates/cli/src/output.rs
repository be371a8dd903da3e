//! Output directories: CSV tables, the config copy and a report.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::config::{config_hash, ScenarioConfig};
use crate::error::{CliError, Result};
use crate::scenario::RunOutput;

/// Environment variable naming the default output root.
pub const OUTPUT_ROOT_VAR: &str = "SRU_OUTPUT_ROOT";

/// `--out`, then the config's `output`, then `$SRU_OUTPUT_ROOT/<name>`,
/// then `sru-output/<name>`.
pub fn resolve_output_dir(cfg: &ScenarioConfig, flag: Option<&Path>) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    if let Some(p) = &cfg.output {
        return p.clone();
    }
    let root = std::env::var_os(OUTPUT_ROOT_VAR)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("sru-output"));
    root.join(&cfg.name)
}

pub struct RunMeta<'a> {
    pub command: &'a str,
    /// Exact bytes written as `config.toml`.
    pub config_copy: &'a str,
    pub wall_clock_seconds: f64,
    pub threads: usize,
}

/// Write every table, `config.toml` and `report.toml` into `dir`. The
/// report carries the run-dependent fields, so the CSVs are reproducible
/// byte for byte.
pub fn write_outputs(dir: &Path, out: &RunOutput, meta: &RunMeta) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let write = |name: &str, bytes: &[u8]| -> Result<PathBuf> {
        let p = dir.join(name);
        std::fs::write(&p, bytes).map_err(|e| CliError::io(&p, e))?;
        Ok(p)
    };
    let mut files = vec![write("config.toml", meta.config_copy.as_bytes())?];
    for t in out.all_tables() {
        files.push(write(&t.file_name(), &t.to_csv()?)?);
    }
    let mut report = String::new();
    let names: Vec<String> = files
        .iter()
        .filter_map(|p| p.file_name().map(|n| format!("{:?}", n.to_string_lossy())))
        .collect();
    let _ = writeln!(report, "command = {:?}", meta.command);
    let _ = writeln!(report, "version = {:?}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(
        report,
        "config_hash = {:?}",
        config_hash(meta.config_copy.as_bytes())
    );
    let _ = writeln!(report, "outcome = {:?}", out.outcome.label());
    if let crate::scenario::Outcome::NonConvergence(m) | crate::scenario::Outcome::CheckFailed(m) =
        &out.outcome
    {
        let _ = writeln!(report, "message = {m:?}");
    }
    let _ = writeln!(report, "wall_clock_seconds = {}", meta.wall_clock_seconds);
    let _ = writeln!(report, "threads = {}", meta.threads);
    let _ = writeln!(report, "files = [{}]", names.join(", "));
    files.push(write("report.toml", report.as_bytes())?);
    Ok(files)
}
