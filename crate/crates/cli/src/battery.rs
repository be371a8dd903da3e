//! Necessary-condition battery: Gateaux derivatives along fixed variations.

use std::path::Path;
use std::sync::Arc;

use sru_core::maxprinciple::check_variation;
use sru_core::{
    gateaux_derivative, solve_system, variation_battery, ControlProblem, Error, GateauxOptions,
    GateauxResult, NoiseBundle, RegressionBasis, SingularControl, SystemState, TimeGrid,
};

use crate::config::{DriverConfig, ScenarioConfig};
use crate::error::{CliError, Result};
use crate::scenario::{sample, Outcome, RunOutput};
use crate::table::{num, Stat, Table};

/// Absolute slack for round-off in noiseless derivatives.
const ROUNDOFF: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowStatus {
    Passed,
    Violated,
    /// `ξ + aβ` leaves the admissible set for some step `a`.
    Skipped,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatteryRow {
    pub name: String,
    pub result: Option<GateauxResult>,
    pub status: RowStatus,
}

/// Evaluate every battery direction at `control`. A row is violated when
/// its numeric derivative exceeds `z` standard errors.
#[allow(clippy::too_many_arguments)]
pub fn run_battery<P: ControlProblem + ?Sized>(
    problem: &P,
    control: &SingularControl,
    grid: &TimeGrid,
    noise: Arc<NoiseBundle>,
    basis: &RegressionBasis,
    options: &GateauxOptions,
    state: &SystemState,
    z: f64,
) -> Result<Vec<BatteryRow>> {
    let mut rows = Vec::new();
    for (name, beta) in variation_battery(grid, control) {
        if let Err(e) = check_variation(control, &beta, &options.steps) {
            match e {
                Error::Inadmissible(_) => {
                    rows.push(BatteryRow {
                        name,
                        result: None,
                        status: RowStatus::Skipped,
                    });
                    continue;
                }
                other => return Err(other.into()),
            }
        }
        let r = gateaux_derivative(
            problem,
            control,
            &beta,
            grid,
            noise.clone(),
            basis,
            options,
            Some(state),
        )?;
        let status = if r.numeric > z * r.numeric_se + ROUNDOFF {
            RowStatus::Violated
        } else {
            RowStatus::Passed
        };
        rows.push(BatteryRow {
            name,
            result: Some(r),
            status,
        });
    }
    Ok(rows)
}

pub fn battery_passed(rows: &[BatteryRow]) -> bool {
    rows.iter().all(|r| r.status != RowStatus::Violated)
}

pub fn battery_table(rows: &[BatteryRow]) -> Table {
    let mut t = Table::new(
        "battery",
        &[
            "variation",
            "numeric",
            "numeric_se",
            "analytic",
            "analytic_se",
            "status",
        ],
    );
    for r in rows {
        let status = match r.status {
            RowStatus::Passed => "passed",
            RowStatus::Violated => "violated",
            RowStatus::Skipped => "skipped",
        };
        let cells = match &r.result {
            Some(g) => vec![
                num(g.numeric),
                num(g.numeric_se),
                num(g.analytic),
                num(g.analytic_se),
            ],
            None => vec![String::new(); 4],
        };
        let mut row = vec![r.name.clone()];
        row.extend(cells);
        row.push(status.to_string());
        t.push(row);
    }
    t
}

/// Read a control from the `t` and `xi` columns of a CSV, checking that
/// the times are the grid nodes.
pub fn read_candidate(path: &Path, grid: &TimeGrid) -> Result<SingularControl> {
    let mut reader = csv::Reader::from_path(path)?;
    let header = reader.headers()?.clone();
    let col = |name: &str| {
        header.iter().position(|h| h == name).ok_or_else(|| {
            CliError::config(format!(
                "{}: candidate needs a `{name}` column",
                path.display()
            ))
        })
    };
    let (kt, kx) = (col("t")?, col("xi")?);
    let mut values = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let parse = |k: usize| {
            rec[k].trim().parse::<f64>().map_err(|_| {
                CliError::config(format!(
                    "{}: row {}: cannot parse {:?}",
                    path.display(),
                    i + 1,
                    &rec[k]
                ))
            })
        };
        let (t, xi) = (parse(kt)?, parse(kx)?);
        if i >= grid.len() || (t - grid.time(i)).abs() > 1e-9 * grid.horizon().max(1.0) {
            return Err(CliError::config(format!(
                "{}: row {} has t = {t}, which is not node {i} of the scenario grid",
                path.display(),
                i + 1
            )));
        }
        values.push(xi);
    }
    if values.len() != grid.len() {
        return Err(CliError::config(format!(
            "{}: candidate has {} nodes, the grid has {}",
            path.display(),
            values.len(),
            grid.len()
        )));
    }
    let control = SingularControl::continuous(values);
    control.validate().map_err(|v| {
        CliError::config(format!("{}: inadmissible candidate: {v}", path.display()))
    })?;
    Ok(control)
}

/// The `battery` command.
pub fn battery_command(cfg: &ScenarioConfig, candidate: &Path) -> Result<RunOutput> {
    cfg.validate()?;
    if !matches!(cfg.driver, DriverConfig::Utility { .. }) {
        return Err(CliError::config(
            "driver.kind: the battery needs a utility driver",
        ));
    }
    let (grid, noise) = sample(cfg)?;
    let control = read_candidate(candidate, &grid)?;
    let problem = cfg.problem();
    let basis = cfg.regression;
    let state = match solve_system(
        &problem,
        &control,
        &grid,
        noise.clone(),
        &basis,
        &cfg.gateaux.picard,
    ) {
        Ok(s) => s,
        Err(Error::PicardNonConvergence { residuals }) => {
            return Ok(RunOutput {
                tables: Vec::new(),
                summary: vec![Stat::exact("picard_iterations", residuals.len())],
                outcome: Outcome::NonConvergence(
                    "Picard iteration did not converge at the candidate".into(),
                ),
            })
        }
        Err(e) => return Err(e.into()),
    };
    let rows = run_battery(
        &problem,
        &control,
        &grid,
        noise,
        &basis,
        &cfg.gateaux,
        &state,
        cfg.checks.battery_z,
    )?;
    let passed = battery_passed(&rows);
    let evaluated = rows
        .iter()
        .filter(|r| r.status != RowStatus::Skipped)
        .count();
    let summary = vec![
        Stat::exact_num("xi_terminal", control.terminal()),
        Stat::exact("rows_evaluated", evaluated),
        Stat::exact("rows_skipped", rows.len() - evaluated),
        Stat::exact_num("z", cfg.checks.battery_z),
        Stat::derived("battery_verdict", if passed { "passed" } else { "failed" }),
    ];
    let outcome = if passed {
        Outcome::Success
    } else {
        Outcome::CheckFailed("variation battery: a derivative is significantly positive".into())
    };
    Ok(RunOutput {
        tables: vec![battery_table(&rows)],
        summary,
        outcome,
    })
}
