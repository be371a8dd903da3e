use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use sru_cli::{
    battery_command, convergence_study, resolve_output_dir, run_scenario, write_outputs, Axis,
    CliError, RunMeta, RunOutput, ScenarioConfig, StudyOptions,
};

#[derive(Parser)]
#[command(
    name = "sru",
    version,
    about = "Singular BSDE and singular control experiments"
)]
struct Cli {
    /// Override the scenario seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the scenario path count.
    #[arg(long, global = true, allow_negative_numbers = true)]
    paths: Option<i64>,
    /// Output directory; defaults to $SRU_OUTPUT_ROOT/<name>.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for path-parallel work.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate, solve and check one scenario.
    Run { config: PathBuf },
    /// Error against a reference as one discretization parameter varies.
    Converge {
        config: PathBuf,
        #[arg(long, value_enum)]
        axis: Axis,
        /// Comma-separated levels: step counts, path counts or iterations.
        #[arg(long, value_delimiter = ',', required = true)]
        levels: Vec<usize>,
        /// Independent samples per level on the paths axis.
        #[arg(long, default_value_t = 32)]
        replicates: usize,
    },
    /// Gateaux derivatives of the objective along the variation battery.
    Battery {
        config: PathBuf,
        /// CSV with `t` and `xi` columns, e.g. `nodes.csv` of a run.
        #[arg(long)]
        candidate: PathBuf,
    },
}

/// Load a scenario and apply overrides. The config copy is the original
/// text unless an override changed it.
fn load(path: &Path, cli: &Cli) -> Result<(ScenarioConfig, String), CliError> {
    let (mut cfg, text) = ScenarioConfig::load(path)?;
    let mut changed = false;
    if let Some(s) = cli.seed {
        changed |= s != cfg.seed;
        cfg.seed = s;
    }
    if let Some(p) = cli.paths {
        changed |= p != cfg.paths;
        cfg.paths = p;
    }
    cfg.validate()?;
    let copy = if changed { cfg.to_toml() } else { text };
    Ok((cfg, copy))
}

fn execute(cli: &Cli) -> Result<i32, CliError> {
    let threads = cli.threads.unwrap_or_else(rayon::current_num_threads);
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::config("--threads: must be positive"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::config(format!("--threads: {e}")))?;
    }
    let (path, name) = match &cli.command {
        Command::Run { config } => (config, "run"),
        Command::Converge { config, .. } => (config, "converge"),
        Command::Battery { config, .. } => (config, "battery"),
    };
    let (cfg, copy) = load(path, cli)?;
    let start = Instant::now();
    let out: RunOutput = match &cli.command {
        Command::Run { .. } => run_scenario(&cfg)?,
        Command::Converge {
            axis,
            levels,
            replicates,
            ..
        } => {
            let opts = StudyOptions {
                axis: *axis,
                levels: levels.clone(),
                replicates: *replicates,
            };
            convergence_study(&cfg, &opts)?
        }
        Command::Battery { candidate, .. } => battery_command(&cfg, candidate)?,
    };
    let dir = resolve_output_dir(&cfg, cli.out.as_deref());
    let meta = RunMeta {
        command: name,
        config_copy: &copy,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        threads,
    };
    write_outputs(&dir, &out, &meta)?;
    for s in &out.summary {
        let se = s.se.map(|v| format!(" (se {v:.3e})")).unwrap_or_default();
        println!("{:<26} {}{se}", s.quantity, s.value);
    }
    println!("outputs in {}", dir.display());
    match &out.outcome {
        sru_cli::Outcome::Success => {}
        sru_cli::Outcome::NonConvergence(m) | sru_cli::Outcome::CheckFailed(m) => {
            eprintln!("sru: {m}")
        }
    }
    Ok(out.outcome.exit_code())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("sru: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
