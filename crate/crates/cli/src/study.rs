//! Convergence studies along the grid, the path count or the Picard
//! iteration count.

use std::sync::Arc;

use sru_core::linear::deterministic_recursion;
use sru_core::{
    linear_solution, mean_and_se, picard_iterates, picard_solve, sample_noise, BsdeSolution,
    ControlProblem, ForwardModel, LinearDriverSpec, NoiseBundle, PathBundle, SingularDriver,
    StandardProblem, TimeGrid, Utility, UtilityDriver,
};

use crate::config::{DriverConfig, ScenarioConfig};
use crate::error::{CliError, Result};
use crate::scenario::{given_control, Outcome, RunOutput};
use crate::table::{num, Stat, Table};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Axis {
    Grid,
    Paths,
    PicardIters,
}

impl Axis {
    pub fn label(&self) -> &'static str {
        match self {
            Axis::Grid => "grid",
            Axis::Paths => "paths",
            Axis::PicardIters => "picard-iters",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyOptions {
    pub axis: Axis,
    pub levels: Vec<usize>,
    /// Independent samples per level on the paths axis.
    pub replicates: usize,
}

/// Error of one level with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelError {
    pub level: usize,
    pub error: f64,
    pub se: f64,
}

/// Least-squares slope of `ys` on `xs` with its standard error (zero
/// for two points).
pub fn fit_slope(xs: &[f64], ys: &[f64]) -> Option<(f64, f64)> {
    let n = xs.len();
    if n < 2 {
        return None;
    }
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let se = if n > 2 {
        let rss: f64 = xs
            .iter()
            .zip(ys)
            .map(|(x, y)| (y - my - slope * (x - mx)).powi(2))
            .sum();
        (rss / (n - 2) as f64 / sxx).sqrt()
    } else {
        0.0
    };
    Some((slope, se))
}

/// `sup_i mean_p |a(p, i) - b(p, k·i)|` over the nodes of `a`, with the
/// standard error at the worst node.
fn sup_mean_abs(a: &BsdeSolution, b: &BsdeSolution, stride: usize) -> (f64, f64) {
    let mut worst = (0.0, 0.0);
    for i in 0..a.nodes() {
        let d: Vec<f64> = (0..a.path_count())
            .map(|p| (a.y(p, i) - b.y(p, stride * i)).abs())
            .collect();
        let (m, se) = mean_and_se(&d);
        if m > worst.0 {
            worst = (m, se);
        }
    }
    worst
}

fn linear_spec(
    cfg: &ScenarioConfig,
    grid: &TimeGrid,
    forward: &PathBundle,
) -> Option<LinearDriverSpec> {
    match cfg.driver {
        DriverConfig::Linear {
            phi,
            alpha,
            c,
            terminal,
        } => {
            let values = forward
                .terminal_values()
                .iter()
                .map(|&x| terminal.value(x))
                .collect();
            Some(LinearDriverSpec::constant(grid, phi, alpha, c, values))
        }
        DriverConfig::Utility { .. } => None,
    }
}

fn sorted_levels(levels: &[usize]) -> Result<Vec<usize>> {
    let mut v = levels.to_vec();
    v.sort_unstable();
    v.dedup();
    if v.len() < 2 {
        return Err(CliError::config(
            "levels: a convergence study needs at least 2 distinct levels",
        ));
    }
    if v[0] == 0 {
        return Err(CliError::config("levels: must be positive"));
    }
    Ok(v)
}

pub fn convergence_study(cfg: &ScenarioConfig, opts: &StudyOptions) -> Result<RunOutput> {
    cfg.validate()?;
    let levels = sorted_levels(&opts.levels)?;
    let (errors, reference) = match opts.axis {
        Axis::Grid => grid_axis(cfg, &levels)?,
        Axis::Paths => paths_axis(cfg, &levels, opts.replicates)?,
        Axis::PicardIters => picard_axis(cfg, &levels)?,
    };
    let horizon = cfg.grid.horizon;
    let mut table = Table::new("convergence", &["level", "error", "error_se"]);
    for e in &errors {
        table.push(vec![e.level.to_string(), num(e.error), num(e.se)]);
    }
    let fitted: Vec<&LevelError> = errors.iter().filter(|e| e.error > 0.0).collect();
    let ys: Vec<f64> = fitted.iter().map(|e| e.error.ln()).collect();
    let (name, fit) = match opts.axis {
        // error against Δt
        Axis::Grid => {
            let xs: Vec<f64> = fitted
                .iter()
                .map(|e| (horizon / e.level as f64).ln())
                .collect();
            ("fitted_order", fit_slope(&xs, &ys))
        }
        // error against the path count
        Axis::Paths => {
            let xs: Vec<f64> = fitted.iter().map(|e| (e.level as f64).ln()).collect();
            ("fitted_order", fit_slope(&xs, &ys))
        }
        // geometric rate per iteration
        Axis::PicardIters => {
            let xs: Vec<f64> = fitted.iter().map(|e| e.level as f64).collect();
            (
                "fitted_rate",
                fit_slope(&xs, &ys).map(|(s, se)| (s.exp(), s.exp() * se)),
            )
        }
    };
    let mut summary = vec![
        Stat::exact("axis", opts.axis.label()),
        Stat::exact("reference", reference),
        Stat::exact("levels", levels.len()),
    ];
    match fit {
        Some((v, se)) => summary.push(Stat::sampled(name, v, se)),
        None => summary.push(Stat::derived(name, "unavailable")),
    }
    Ok(RunOutput {
        tables: vec![table],
        summary,
        outcome: Outcome::Success,
    })
}

fn grid_axis(cfg: &ScenarioConfig, levels: &[usize]) -> Result<(Vec<LevelError>, &'static str)> {
    let finest = *levels.last().expect("at least two levels");
    if let Some(l) = levels.iter().find(|&&l| finest % l != 0) {
        return Err(CliError::config(format!(
            "levels: {l} does not divide the finest level {finest}"
        )));
    }
    let horizon = cfg.grid.horizon;
    let fine_grid = TimeGrid::new(horizon, finest)?;
    let fine_noise = sample_noise(&fine_grid, cfg.path_count(), None, cfg.seed)?;
    let problem = cfg.problem();
    let basis = cfg.regression;
    let solve = |steps: usize| -> Result<(TimeGrid, PathBundle, BsdeSolution)> {
        let grid = TimeGrid::new(horizon, steps)?;
        let noise = Arc::new(fine_noise.coarsened(finest / steps)?);
        let control = given_control(cfg, &grid)?;
        let forward = problem.simulate(&control, &grid, noise)?;
        let driver: Box<dyn SingularDriver> = match linear_spec(cfg, &grid, &forward) {
            Some(spec) => Box::new(spec),
            None => Box::new(UtilityDriver { problem: &problem }),
        };
        let y = picard_solve(driver.as_ref(), &forward, &basis, &cfg.picard)?;
        Ok((grid, forward, y))
    };
    let mut out = Vec::new();
    if matches!(cfg.driver, DriverConfig::Linear { .. }) {
        for &l in levels {
            let (grid, forward, y) = solve(l)?;
            let spec = linear_spec(cfg, &grid, &forward).expect("linear driver");
            let oracle = linear_solution(&spec, &forward, &basis)?;
            let (error, se) = sup_mean_abs(&y, &oracle, 1);
            out.push(LevelError {
                level: l,
                error,
                se,
            });
        }
        Ok((out, "linear oracle on each grid"))
    } else {
        let (_, _, reference) = solve(finest)?;
        for &l in &levels[..levels.len() - 1] {
            let (_, _, y) = solve(l)?;
            let (error, se) = sup_mean_abs(&y, &reference, finest / l);
            out.push(LevelError {
                level: l,
                error,
                se,
            });
        }
        Ok((out, "finest grid"))
    }
}

/// `Y(0)` of the linear driver with the terminal expectation in closed
/// form; requires the geometric model, an affine terminal value and a
/// continuous control.
fn exact_linear_y0(cfg: &ScenarioConfig, grid: &TimeGrid) -> Result<f64> {
    let (x0, b0) = match cfg.model {
        ForwardModel::Geometric { x0, b0, .. } => (x0, b0),
        ForwardModel::Affine { .. } => {
            return Err(CliError::config(
                "model.kind: the paths axis needs the geometric model",
            ))
        }
    };
    let (phi, alpha, c, terminal) = match cfg.driver {
        DriverConfig::Linear {
            phi,
            alpha,
            c,
            terminal,
        } => (phi, alpha, c, terminal),
        DriverConfig::Utility { .. } => {
            return Err(CliError::config(
                "driver.kind: the paths axis needs the linear driver",
            ))
        }
    };
    let control = given_control(cfg, grid)?;
    let mean_x = x0 * (b0 * grid.horizon() - control.terminal()).exp();
    let mean_terminal = match terminal {
        Utility::Zero => 0.0,
        Utility::Affine { intercept, slope } => intercept + slope * mean_x,
        Utility::Exponential { .. } => {
            return Err(CliError::config(
                "driver.terminal: the paths axis needs an affine terminal value",
            ))
        }
    };
    let n = grid.len();
    let y = deterministic_recursion(
        &vec![phi; n],
        &vec![alpha; n],
        &vec![c; n],
        mean_terminal,
        &control,
    );
    Ok(y[0])
}

fn paths_axis(
    cfg: &ScenarioConfig,
    levels: &[usize],
    replicates: usize,
) -> Result<(Vec<LevelError>, &'static str)> {
    if replicates < 2 {
        return Err(CliError::config("replicates: need at least 2"));
    }
    if levels[0] < 2 {
        return Err(CliError::config("levels: path counts must be at least 2"));
    }
    let grid = TimeGrid::new(cfg.grid.horizon, cfg.grid.steps)?;
    let exact = exact_linear_y0(cfg, &grid)?;
    let problem = cfg.problem();
    let control = given_control(cfg, &grid)?;
    let mut out = Vec::new();
    for &l in levels {
        let mut sq = Vec::with_capacity(replicates);
        for r in 0..replicates {
            let seed = cfg
                .seed
                .wrapping_add((r as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            let noise: Arc<NoiseBundle> = Arc::new(sample_noise(&grid, l, None, seed)?);
            let forward = problem.simulate(&control, &grid, noise)?;
            let spec = linear_spec(cfg, &grid, &forward).expect("linear driver");
            let y = picard_solve(&spec, &forward, &cfg.regression, &cfg.picard)?;
            sq.push((y.y0() - exact).powi(2));
        }
        let (ms, ms_se) = mean_and_se(&sq);
        let rms = ms.sqrt();
        let se = if rms > 0.0 { ms_se / (2.0 * rms) } else { 0.0 };
        out.push(LevelError {
            level: l,
            error: rms,
            se,
        });
    }
    Ok((out, "closed-form Y(0)"))
}

fn picard_axis(cfg: &ScenarioConfig, levels: &[usize]) -> Result<(Vec<LevelError>, &'static str)> {
    let grid = TimeGrid::new(cfg.grid.horizon, cfg.grid.steps)?;
    let noise = Arc::new(sample_noise(&grid, cfg.path_count(), None, cfg.seed)?);
    let problem: StandardProblem = cfg.problem();
    let control = given_control(cfg, &grid)?;
    let forward = problem.simulate(&control, &grid, noise)?;
    let basis = cfg.regression;
    let linear = linear_spec(cfg, &grid, &forward);
    let utility = UtilityDriver { problem: &problem };
    let (driver, reference, label): (&dyn SingularDriver, BsdeSolution, &'static str) =
        match &linear {
            Some(spec) => (
                spec,
                linear_solution(spec, &forward, &basis)?,
                "linear oracle",
            ),
            None => (
                &utility,
                picard_solve(&utility, &forward, &basis, &cfg.picard)?,
                "converged Picard solution",
            ),
        };
    let mut out = Vec::new();
    for &k in levels {
        let y = picard_iterates(driver, &forward, &basis, k)?;
        let (error, se) = sup_mean_abs(&y, &reference, 1);
        out.push(LevelError {
            level: k,
            error,
            se,
        });
    }
    Ok((out, label))
}
