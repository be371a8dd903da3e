//! The `run` pipeline: simulate, solve, check, tabulate.

use std::sync::Arc;

use sru_core::{
    contraction_diagnostics, extract_z, gamma_process, linear_solution, martingale_check,
    mean_and_se, objective_from, picard_solve, sample_noise, solve_reflection_fixed_point,
    solve_system, BsdeSolution, ContractionReport, ControlProblem, Error, FixedPointTrace,
    LinearDriverSpec, LipschitzConstants, NoiseBundle, SingularControl, StandardProblem,
    SystemState, TimeGrid, Utility,
};

use crate::battery::{battery_passed, battery_table, run_battery};
use crate::config::{ControlConfig, DriverConfig, ScenarioConfig};
use crate::error::{CliError, Result};
use crate::table::{num, summary_table, Stat, Table};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Outcome {
    Success,
    NonConvergence(String),
    CheckFailed(String),
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        match self {
            Outcome::Success => 0,
            Outcome::NonConvergence(_) => 3,
            Outcome::CheckFailed(_) => 4,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Outcome::Success => "success",
            Outcome::NonConvergence(_) => "non_convergence",
            Outcome::CheckFailed(_) => "check_failed",
        }
    }
}

/// Tables and summary statistics of one command.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub tables: Vec<Table>,
    pub summary: Vec<Stat>,
    pub outcome: Outcome,
}

impl RunOutput {
    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }

    pub fn stat(&self, quantity: &str) -> Option<&Stat> {
        self.summary.iter().find(|s| s.quantity == quantity)
    }

    /// All tables including `summary`, in output order.
    pub fn all_tables(&self) -> Vec<Table> {
        let mut out = self.tables.clone();
        out.push(summary_table(&self.summary));
        out
    }
}

/// Grid and noise of a scenario.
pub fn sample(cfg: &ScenarioConfig) -> Result<(TimeGrid, Arc<NoiseBundle>)> {
    let grid = TimeGrid::new(cfg.grid.horizon, cfg.grid.steps)?;
    let noise = sample_noise(&grid, cfg.path_count(), None, cfg.seed)?;
    Ok((grid, Arc::new(noise)))
}

/// The declared control, or an error for `fixed_point`.
pub fn given_control(cfg: &ScenarioConfig, grid: &TimeGrid) -> Result<SingularControl> {
    match cfg.control {
        ControlConfig::Zero => Ok(SingularControl::zero(grid)),
        ControlConfig::Linear { rate } => Ok(SingularControl::from_fn(grid, |t| rate * t)),
        ControlConfig::FixedPoint => Err(CliError::config(
            "control.kind: this command needs a given control, not fixed_point",
        )),
    }
}

pub fn run_scenario(cfg: &ScenarioConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let (grid, noise) = sample(cfg)?;
    match cfg.driver {
        DriverConfig::Linear {
            phi,
            alpha,
            c,
            terminal,
        } => run_linear(cfg, &grid, noise, (phi, alpha, c), terminal),
        DriverConfig::Utility { .. } => run_utility(cfg, &grid, noise),
    }
}

/// Per-node mean and standard error of a path-major surface.
pub fn node_stats(surface: &[f64], nodes: usize) -> Vec<(f64, f64)> {
    let paths = surface.len() / nodes;
    (0..nodes)
        .map(|i| {
            let col: Vec<f64> = (0..paths).map(|p| surface[p * nodes + i]).collect();
            mean_and_se(&col)
        })
        .collect()
}

/// `Y(0)` with the standard error of the regressed root targets.
pub fn y0_stat(sol: &BsdeSolution) -> (f64, f64) {
    (sol.y0(), mean_and_se(sol.root_targets()).1)
}

fn residual_table(residuals: &[f64], report: &ContractionReport) -> Table {
    let mut t = Table::new(
        "residuals",
        &["iteration", "residual", "ratio", "factorial_bound"],
    );
    for (k, r) in residuals.iter().enumerate() {
        let ratio = if k == 0 { None } else { report.ratios[k - 1] };
        let bound = report
            .factorial_bound
            .as_ref()
            .and_then(|b| b.get(k).copied());
        t.push(vec![
            (k + 1).to_string(),
            num(*r),
            ratio.map(num).unwrap_or_default(),
            bound.map(num).unwrap_or_default(),
        ]);
    }
    t
}

fn picard_failure(residuals: &[f64]) -> RunOutput {
    let report = contraction_diagnostics(residuals, None);
    RunOutput {
        tables: vec![residual_table(residuals, &report)],
        summary: vec![Stat::exact("picard_iterations", residuals.len())],
        outcome: Outcome::NonConvergence(format!(
            "Picard iteration did not converge in {} iterations (last residual {})",
            residuals.len(),
            residuals.last().map(|r| num(*r)).unwrap_or_default()
        )),
    }
}

fn run_linear(
    cfg: &ScenarioConfig,
    grid: &TimeGrid,
    noise: Arc<NoiseBundle>,
    (phi, alpha, c): (f64, f64, f64),
    terminal: Utility,
) -> Result<RunOutput> {
    let control = given_control(cfg, grid)?;
    let forward = cfg.problem().simulate(&control, grid, noise)?;
    let values: Vec<f64> = forward
        .terminal_values()
        .iter()
        .map(|&x| terminal.value(x))
        .collect();
    let spec = LinearDriverSpec::constant(grid, phi, alpha, c, values);
    let basis = cfg.regression;
    let sol = match picard_solve(&spec, &forward, &basis, &cfg.picard) {
        Ok(s) => s,
        Err(Error::PicardNonConvergence { residuals }) => return Ok(picard_failure(&residuals)),
        Err(e) => return Err(e.into()),
    };
    let z = extract_z(&sol, &forward, &basis)?;
    let oracle = linear_solution(&spec, &forward, &basis)?;
    let gamma = gamma_process(&spec.alpha, &control, grid)?;
    let mart = martingale_check(&gamma, &sol, &spec, &control)?;
    let constants = LipschitzConstants {
        c1: spec.lipschitz(),
        c2: 0.0,
        xi_total: control.terminal(),
        horizon: grid.horizon(),
    };
    let report = contraction_diagnostics(&sol.residuals, Some(&constants));

    let n = grid.len();
    let x = node_stats(forward.states(), n);
    let y = node_stats(sol.y_surface(), n);
    let yo = node_stats(oracle.y_surface(), n);
    let zs = node_stats(&z, n);
    let mut nodes = Table::new(
        "nodes",
        &[
            "node",
            "t",
            "xi",
            "gamma",
            "x_mean",
            "x_se",
            "y_mean",
            "y_se",
            "y_oracle_mean",
            "y_oracle_se",
            "z_mean",
            "z_se",
        ],
    );
    for i in 0..n {
        nodes.push(vec![
            i.to_string(),
            num(grid.time(i)),
            num(control.value(i)),
            num(gamma.value(i)),
            num(x[i].0),
            num(x[i].1),
            num(y[i].0),
            num(y[i].1),
            num(yo[i].0),
            num(yo[i].1),
            num(zs[i].0),
            num(zs[i].1),
        ]);
    }
    let mut martingale = Table::new(
        "martingale",
        &["step", "t", "increment_mean", "increment_se"],
    );
    for (k, (m, se)) in mart
        .increment_means
        .iter()
        .zip(&mart.increment_se)
        .enumerate()
    {
        martingale.push(vec![k.to_string(), num(grid.time(k)), num(*m), num(*se)]);
    }

    let (y0, y0_se) = y0_stat(&sol);
    // the oracle's root target is Γ(T) · terminal plus a constant
    let oracle_se = gamma.ratio(n - 1, 0) * mean_and_se(&spec.terminal).1;
    let summary = vec![
        Stat::sampled("y0", y0, y0_se),
        Stat::sampled("y0_oracle", oracle.y0(), oracle_se),
        Stat::exact_num("xi_terminal", control.terminal()),
        Stat::exact("picard_iterations", sol.iterations),
        Stat::derived("final_residual", num(*sol.residuals.last().unwrap_or(&0.0))),
        Stat::exact_num("contraction_constant", constants.contraction_constant()),
        Stat::derived(
            "contraction_verdict",
            format!("{:?}", report.verdict).to_lowercase(),
        ),
        Stat::derived("martingale_max_abs_mean", num(mart.max_abs_mean)),
        Stat::derived("martingale_max_z", num(mart.max_z_score)),
    ];
    Ok(RunOutput {
        tables: vec![nodes, residual_table(&sol.residuals, &report), martingale],
        summary,
        outcome: Outcome::Success,
    })
}

fn trace_tables(trace: &FixedPointTrace, grid: &TimeGrid) -> Vec<Table> {
    let mut sweeps = Table::new(
        "trace",
        &[
            "sweep",
            "xi_terminal",
            "update_norm",
            "stiffness",
            "max_excess",
            "complementarity_residual",
        ],
    );
    let mut controls = Table::new("trace_nodes", &["sweep", "node", "t", "xi", "barrier_mean"]);
    for r in &trace.sweeps {
        sweeps.push(vec![
            r.sweep.to_string(),
            num(*r.control.last().unwrap_or(&0.0)),
            num(r.update_norm),
            num(r.stiffness),
            num(r.vi.max_excess),
            num(r.vi.complementarity_residual),
        ]);
        for (i, (xi, s)) in r.control.iter().zip(&r.barrier_mean).enumerate() {
            controls.push(vec![
                r.sweep.to_string(),
                i.to_string(),
                num(grid.time(i)),
                num(*xi),
                num(*s),
            ]);
        }
    }
    vec![sweeps, controls]
}

/// Barrier statistics with standard errors: per node `(S, S⁺, |∫_0^t S dξ|)`.
struct BarrierStats {
    barrier: Vec<(f64, f64)>,
    excess: Vec<(f64, f64)>,
    complementarity: Vec<(f64, f64)>,
}

fn barrier_stats(problem: &StandardProblem, state: &SystemState) -> BarrierStats {
    let s = state.barrier(problem);
    let control = state.forward.control();
    let n = control.len();
    let paths = s.len() / n;
    let excess: Vec<f64> = s.iter().map(|v| v.max(0.0)).collect();
    let mut running = vec![0.0; s.len()];
    for p in 0..paths {
        let mut acc = s[p * n] * control.value(0);
        running[p * n] = acc.abs();
        for i in 0..n - 1 {
            acc += s[p * n + i] * control.increment(i);
            running[p * n + i + 1] = acc.abs();
        }
    }
    BarrierStats {
        barrier: node_stats(&s, n),
        excess: node_stats(&excess, n),
        complementarity: node_stats(&running, n),
    }
}

fn run_utility(
    cfg: &ScenarioConfig,
    grid: &TimeGrid,
    noise: Arc<NoiseBundle>,
) -> Result<RunOutput> {
    let problem = cfg.problem();
    let basis = cfg.regression;
    let mut tables = Vec::new();
    let mut summary = Vec::new();
    let fixed_point = cfg.control == ControlConfig::FixedPoint;
    let (control, state) = if fixed_point {
        match solve_reflection_fixed_point(
            &problem,
            grid,
            noise.clone(),
            &basis,
            &cfg.reflection,
            None,
        ) {
            Ok(sol) => {
                tables.extend(trace_tables(&sol.trace, grid));
                summary.push(Stat::exact("sweeps", sol.trace.sweeps.len()));
                summary.push(Stat::derived("boundary_epsilon", num(sol.epsilon)));
                (sol.control, sol.state)
            }
            Err(Error::SweepNonConvergence {
                sweeps,
                last_update,
                trace,
            }) => {
                tables.extend(trace_tables(&trace, grid));
                summary.push(Stat::exact("sweeps", sweeps));
                return Ok(RunOutput {
                    tables,
                    summary,
                    outcome: Outcome::NonConvergence(format!(
                        "fixed point did not converge in {sweeps} sweeps (last update {})",
                        num(last_update)
                    )),
                });
            }
            Err(Error::PicardNonConvergence { residuals }) => {
                return Ok(picard_failure(&residuals))
            }
            Err(e) => return Err(e.into()),
        }
    } else {
        let control = given_control(cfg, grid)?;
        match solve_system(&problem, &control, grid, noise.clone(), &basis, &cfg.picard) {
            Ok(state) => (control, state),
            Err(Error::PicardNonConvergence { residuals }) => {
                return Ok(picard_failure(&residuals))
            }
            Err(e) => return Err(e.into()),
        }
    };

    let n = grid.len();
    let z = match state.y.z_surface() {
        Some(z) => z.to_vec(),
        None => extract_z(&state.y, &state.forward, &basis)?,
    };
    let q = state.p.z_surface().expect("adjoint carries q").to_vec();
    let x = node_stats(state.forward.states(), n);
    let y = node_stats(state.y.y_surface(), n);
    let zs = node_stats(&z, n);
    let lam = node_stats(&state.lambda, n);
    let p = node_stats(state.p.y_surface(), n);
    let qs = node_stats(&q, n);
    let vi_supported = !problem.g_depends_on_xi();
    let bs = barrier_stats(&problem, &state);

    let mut nodes = Table::new(
        "nodes",
        &[
            "node",
            "t",
            "xi",
            "x_mean",
            "x_se",
            "y_mean",
            "y_se",
            "z_mean",
            "z_se",
            "lambda_mean",
            "lambda_se",
            "p_mean",
            "p_se",
            "q_mean",
            "q_se",
            "barrier_mean",
            "barrier_se",
            "excess_mean",
            "excess_se",
            "complementarity_mean",
            "complementarity_se",
        ],
    );
    for i in 0..n {
        let mut row = vec![i.to_string(), num(grid.time(i)), num(control.value(i))];
        for (m, se) in [
            x[i],
            y[i],
            zs[i],
            lam[i],
            p[i],
            qs[i],
            bs.barrier[i],
            bs.excess[i],
            bs.complementarity[i],
        ] {
            row.push(num(m));
            row.push(num(se));
        }
        nodes.push(row);
    }
    tables.insert(0, nodes);
    let report = contraction_diagnostics(&state.y.residuals, None);
    tables.push(residual_table(&state.y.residuals, &report));

    let (y0, y0_se) = y0_stat(&state.y);
    let objective = objective_from(&problem, &state.forward, &state.y);
    summary.push(Stat::sampled("y0", y0, y0_se));
    summary.push(Stat::sampled(
        "objective",
        objective.value,
        mean_and_se(&objective.contributions).1,
    ));
    summary.push(Stat::exact_num("xi_terminal", control.terminal()));
    summary.push(Stat::exact("picard_iterations", state.y.iterations));

    let mut outcome = Outcome::Success;
    if vi_supported {
        let worst = (0..n)
            .max_by(|&a, &b| bs.excess[a].0.total_cmp(&bs.excess[b].0))
            .unwrap_or(0);
        let (max_excess, excess_se) = bs.excess[worst];
        let (comp, comp_se) = bs.complementarity[n - 1];
        let tol = cfg.reflection.vi_tol;
        let consistent = max_excess < tol && comp < tol;
        summary.push(Stat::sampled("max_excess", max_excess, excess_se));
        summary.push(Stat::sampled("complementarity_residual", comp, comp_se));
        summary.push(Stat::exact_num("vi_tol", tol));
        summary.push(Stat::derived("vi_consistent", consistent));
        if fixed_point && !consistent {
            outcome = Outcome::CheckFailed(format!(
                "variational inequality not met: max excess {}, complementarity {} (tolerance {})",
                num(max_excess),
                num(comp),
                num(tol)
            ));
        }
    } else {
        summary.push(Stat::exact("vi_consistent", "unsupported"));
    }

    if cfg.checks.battery {
        let rows = run_battery(
            &problem,
            &control,
            grid,
            noise,
            &basis,
            &cfg.gateaux,
            &state,
            cfg.checks.battery_z,
        )?;
        let passed = battery_passed(&rows);
        tables.push(battery_table(&rows));
        summary.push(Stat::derived(
            "battery_verdict",
            if passed { "passed" } else { "failed" },
        ));
        if !passed && outcome == Outcome::Success {
            outcome = Outcome::CheckFailed(
                "variation battery: a derivative is significantly positive".into(),
            );
        }
    }
    Ok(RunOutput {
        tables,
        summary,
        outcome,
    })
}
