//! Closed form of the linear singular BSDE with `g = φ + αY + cξ`:
//! `Y(t) = E[Γ(T)/Γ(t) X + ∫_t^T Γ(s)/Γ(t) (φ + cξ) dξ(s) | F_t]`,
//! `Γ(t) = exp(∫_0^t α dξ)`.

use rayon::prelude::*;

use crate::bsde::{fit_projectors, BsdeSolution, DriverArgs, SingularDriver};
use crate::control::SingularControl;
use crate::error::{Error, Result};
use crate::forward::PathBundle;
use crate::grid::TimeGrid;
use crate::regression::RegressionBasis;

/// Node paths `φ, α, c` and per-path terminal values.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearDriverSpec {
    pub phi: Vec<f64>,
    pub alpha: Vec<f64>,
    pub c: Vec<f64>,
    pub terminal: Vec<f64>,
}

impl LinearDriverSpec {
    pub fn constant(grid: &TimeGrid, phi: f64, alpha: f64, c: f64, terminal: Vec<f64>) -> Self {
        let n = grid.len();
        Self {
            phi: vec![phi; n],
            alpha: vec![alpha; n],
            c: vec![c; n],
            terminal,
        }
    }

    pub fn check(&self, nodes: usize, paths: usize) -> Result<()> {
        if self.phi.len() != nodes || self.alpha.len() != nodes || self.c.len() != nodes {
            return Err(Error::config(
                "coefficient paths must have one value per node",
            ));
        }
        if self.terminal.len() != paths {
            return Err(Error::config(
                "terminal values must have one value per path",
            ));
        }
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        if !(finite(&self.phi) && finite(&self.alpha) && finite(&self.c) && finite(&self.terminal))
        {
            return Err(Error::config("linear driver data must be finite"));
        }
        Ok(())
    }

    /// Declared constants `C₁ = sup|α|`, `C₂ = 0`.
    pub fn lipschitz(&self) -> f64 {
        self.alpha.iter().fold(0.0f64, |m, a| m.max(a.abs()))
    }
}

impl SingularDriver for LinearDriverSpec {
    fn singular(&self, a: &DriverArgs) -> f64 {
        self.phi[a.node] + self.alpha[a.node] * a.y + self.c[a.node] * a.xi
    }

    fn terminal(&self, path: usize, _x: f64) -> f64 {
        self.terminal[path]
    }
}

/// `Γ(t_i)` on every node. The control is deterministic, so `Γ` is shared
/// by all paths.
#[derive(Debug, Clone, PartialEq)]
pub struct GammaPath {
    log: Vec<f64>,
}

impl GammaPath {
    pub fn value(&self, i: usize) -> f64 {
        self.log[i].exp()
    }

    pub fn values(&self) -> Vec<f64> {
        self.log.iter().map(|l| l.exp()).collect()
    }

    pub fn log_values(&self) -> &[f64] {
        &self.log
    }

    /// `Γ(t_j) / Γ(t_i)`.
    pub fn ratio(&self, j: usize, i: usize) -> f64 {
        (self.log[j] - self.log[i]).exp()
    }

    pub fn len(&self) -> usize {
        self.log.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log.is_empty()
    }
}

/// `Γ(t_i) = exp(Σ_{j<i} α(t_j) Δξ_j)`.
pub fn gamma_process(
    alpha: &[f64],
    control: &SingularControl,
    grid: &TimeGrid,
) -> Result<GammaPath> {
    gamma_from(alpha, control, grid, 0)
}

/// `Γ` restarted at node `start` with `Γ(t_start) = 1`; nodes before
/// `start` are left at one.
pub fn gamma_from(
    alpha: &[f64],
    control: &SingularControl,
    grid: &TimeGrid,
    start: usize,
) -> Result<GammaPath> {
    if !control.is_continuous() || control.value(0) != 0.0 {
        return Err(Error::precondition(
            "Γ is defined here for continuous controls only",
        ));
    }
    if alpha.len() != grid.len() || control.len() != grid.len() {
        return Err(Error::config("α and ξ must be defined on every grid node"));
    }
    let mut log = vec![0.0; grid.len()];
    for i in start..grid.steps() {
        log[i + 1] = log[i] + alpha[i] * control.increment(i);
    }
    Ok(GammaPath { log })
}

/// Deterministic part `Σ_{j≥i} Γ(t_j) (φ + cξ)(t_j) Δξ_j` for every node.
fn discounted_flow(
    spec: &LinearDriverSpec,
    gamma: &GammaPath,
    control: &SingularControl,
) -> Vec<f64> {
    let n = control.len();
    let mut out = vec![0.0; n];
    for i in (0..n - 1).rev() {
        out[i] = out[i + 1]
            + gamma.value(i) * (spec.phi[i] + spec.c[i] * control.value(i)) * control.increment(i);
    }
    out
}

/// Regressed closed-form solution along `forward`.
pub fn linear_solution(
    spec: &LinearDriverSpec,
    forward: &PathBundle,
    basis: &RegressionBasis,
) -> Result<BsdeSolution> {
    let grid = forward.grid();
    let control = forward.control();
    let paths = forward.path_count();
    let n = grid.len();
    spec.check(n, paths)?;
    let gamma = gamma_process(&spec.alpha, control, grid)?;
    let flow = discounted_flow(spec, &gamma, control);
    let projectors = fit_projectors(forward, basis)?;

    let columns: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let scale = gamma.ratio(n - 1, i);
            let shift = flow[i] / gamma.value(i);
            let target: Vec<f64> = spec.terminal.iter().map(|x| scale * x + shift).collect();
            if i == n - 1 {
                target
            } else {
                let [x, xi] = crate::bsde::state_columns(forward, i);
                projectors[i].project(&[&x, &xi], &target)
            }
        })
        .collect();
    let mut y = vec![0.0; n * paths];
    for (i, col) in columns.into_iter().enumerate() {
        for (p, v) in col.into_iter().enumerate() {
            y[p * n + i] = v;
        }
    }
    Ok(BsdeSolution::from_surface(n, paths, y))
}

/// Exact backward recursion `Y_i = e^{α_i Δξ_i} Y_{i+1} + (φ_i + c_i ξ_i) Δξ_i`
/// for a deterministic terminal value.
pub fn deterministic_recursion(
    phi: &[f64],
    alpha: &[f64],
    c: &[f64],
    terminal: f64,
    control: &SingularControl,
) -> Vec<f64> {
    let n = control.len();
    let mut y = vec![0.0; n];
    y[n - 1] = terminal;
    for i in (0..n - 1).rev() {
        let d = control.increment(i);
        y[i] = (alpha[i] * d).exp() * y[i + 1] + (phi[i] + c[i] * control.value(i)) * d;
    }
    y
}

#[derive(Debug, Clone, PartialEq)]
pub struct MartingaleReport {
    /// Sample mean of `M(t_{i+1}) - M(t_i)` per step.
    pub increment_means: Vec<f64>,
    pub increment_se: Vec<f64>,
    pub max_abs_mean: f64,
    /// Largest `|mean| / se` over the steps with positive standard error.
    pub max_z_score: f64,
}

/// Increments of `M(t) = Γ(t) Y(t) + ∫_0^t Γ (φ + cξ) dξ` along the paths.
pub fn martingale_check(
    gamma: &GammaPath,
    y: &BsdeSolution,
    spec: &LinearDriverSpec,
    control: &SingularControl,
) -> Result<MartingaleReport> {
    let n = control.len();
    if gamma.len() != n || y.nodes() != n {
        return Err(Error::precondition("Γ, Y and ξ must share the grid"));
    }
    let paths = y.path_count();
    let mut means = Vec::with_capacity(n - 1);
    let mut ses = Vec::with_capacity(n - 1);
    for i in 0..n - 1 {
        let flow =
            gamma.value(i) * (spec.phi[i] + spec.c[i] * control.value(i)) * control.increment(i);
        let inc: Vec<f64> = (0..paths)
            .map(|p| gamma.value(i + 1) * y.y(p, i + 1) - gamma.value(i) * y.y(p, i) + flow)
            .collect();
        let (m, se) = mean_and_se(&inc);
        means.push(m);
        ses.push(se);
    }
    let max_abs_mean = means.iter().fold(0.0f64, |a, m| a.max(m.abs()));
    let max_z_score = means
        .iter()
        .zip(&ses)
        .filter(|(_, s)| **s > 0.0)
        .fold(0.0f64, |a, (m, s)| a.max(m.abs() / s));
    Ok(MartingaleReport {
        increment_means: means,
        increment_se: ses,
        max_abs_mean,
        max_z_score,
    })
}

/// Sample mean and its standard error.
pub fn mean_and_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (m, 0.0);
    }
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}
