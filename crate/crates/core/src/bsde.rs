//! Picard iteration for the singular BSDE
//! `dY = -b(t, Y, Z) dt - g(t, Y, ξ) dξ + Z dB`, `Y(T) = terminal`,
//! with conditional expectations estimated by [`NodeProjector`].
//!
//! Each iterate regresses the whole pathwise target
//! `terminal + Σ_{j≥i} g(Y^n_j) Δξ_j + Σ_{j≥i} b(Y^n_j, Z^n_j) Δt`
//! on the state `(X(t_i), ξ(t_i))`, starting from `Y⁰ ≡ 0`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::PathBundle;
use crate::regression::{NodeProjector, RegressionBasis};

/// Point at which a driver is evaluated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriverArgs {
    pub path: usize,
    pub node: usize,
    pub t: f64,
    pub x: f64,
    pub xi: f64,
    pub y: f64,
    pub z: f64,
}

/// Generator of a singular BSDE.
pub trait SingularDriver: Sync {
    /// `g`, integrated against `dξ`.
    fn singular(&self, a: &DriverArgs) -> f64;

    /// `b`, integrated against `dt`.
    fn drift(&self, _a: &DriverArgs) -> f64 {
        0.0
    }

    /// Terminal value of path `path` given its final forward state.
    fn terminal(&self, path: usize, x_terminal: f64) -> f64;

    /// Whether `drift` reads `z`; if so `Z` is re-extracted every iteration.
    fn uses_z(&self) -> bool {
        false
    }
}

type DriverFn = Box<dyn Fn(&DriverArgs) -> f64 + Send + Sync>;
type TerminalFn = Box<dyn Fn(usize, f64) -> f64 + Send + Sync>;

/// Driver assembled from closures.
pub struct FnDriver {
    singular: DriverFn,
    drift: DriverFn,
    terminal: TerminalFn,
    uses_z: bool,
}

impl FnDriver {
    pub fn new(
        singular: impl Fn(&DriverArgs) -> f64 + Send + Sync + 'static,
        terminal: impl Fn(usize, f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            singular: Box::new(singular),
            drift: Box::new(|_| 0.0),
            terminal: Box::new(terminal),
            uses_z: false,
        }
    }

    pub fn with_drift(
        mut self,
        drift: impl Fn(&DriverArgs) -> f64 + Send + Sync + 'static,
        uses_z: bool,
    ) -> Self {
        self.drift = Box::new(drift);
        self.uses_z = uses_z;
        self
    }
}

impl SingularDriver for FnDriver {
    fn singular(&self, a: &DriverArgs) -> f64 {
        (self.singular)(a)
    }
    fn drift(&self, a: &DriverArgs) -> f64 {
        (self.drift)(a)
    }
    fn terminal(&self, path: usize, x: f64) -> f64 {
        (self.terminal)(path, x)
    }
    fn uses_z(&self) -> bool {
        self.uses_z
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PicardOptions {
    /// Stop once the residual is at or below this value. `None` selects
    /// `1e-4 · (1 + |mean terminal|)`.
    pub tol: Option<f64>,
    pub max_iter: usize,
}

impl Default for PicardOptions {
    fn default() -> Self {
        Self {
            tol: None,
            max_iter: 50,
        }
    }
}

/// `Y` (and optionally `Z`) per path and node, path-major.
#[derive(Debug, Clone, PartialEq)]
pub struct BsdeSolution {
    nodes: usize,
    paths: usize,
    y: Vec<f64>,
    z: Option<Vec<f64>>,
    /// `sup_i mean_p |Y^{n+1} - Y^n|` for each iteration.
    pub residuals: Vec<f64>,
    pub iterations: usize,
    /// Pathwise targets regressed at the root node in the last iteration.
    root_targets: Vec<f64>,
}

impl BsdeSolution {
    pub fn from_surface(nodes: usize, paths: usize, y: Vec<f64>) -> Self {
        assert_eq!(y.len(), nodes * paths);
        let root_targets = (0..paths).map(|p| y[p * nodes]).collect();
        Self {
            nodes,
            paths,
            y,
            z: None,
            residuals: Vec::new(),
            iterations: 0,
            root_targets,
        }
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn path_count(&self) -> usize {
        self.paths
    }

    pub fn y(&self, p: usize, i: usize) -> f64 {
        self.y[p * self.nodes + i]
    }

    pub fn y_path(&self, p: usize) -> &[f64] {
        &self.y[p * self.nodes..(p + 1) * self.nodes]
    }

    pub fn y_surface(&self) -> &[f64] {
        &self.y
    }

    pub fn y_column(&self, i: usize) -> Vec<f64> {
        (0..self.paths).map(|p| self.y(p, i)).collect()
    }

    pub fn z_surface(&self) -> Option<&[f64]> {
        self.z.as_deref()
    }

    pub fn z(&self, p: usize, i: usize) -> Option<f64> {
        self.z.as_ref().map(|z| z[p * self.nodes + i])
    }

    pub fn set_z(&mut self, z: Vec<f64>) {
        assert_eq!(z.len(), self.y.len());
        self.z = Some(z);
    }

    /// `Y(0)`; the root regression has a constant state, so every path
    /// carries the same value.
    pub fn y0(&self) -> f64 {
        self.y[0]
    }

    /// Pathwise targets whose sample mean is `Y(0)`.
    pub fn root_targets(&self) -> &[f64] {
        &self.root_targets
    }
}

/// Regression state `(X(t_i), ξ(t_i))` at node `i`.
pub(crate) fn state_columns(forward: &PathBundle, i: usize) -> [Vec<f64>; 2] {
    [
        forward.column(i),
        vec![forward.control().value(i); forward.path_count()],
    ]
}

/// One fitted projector per node.
pub(crate) fn fit_projectors(
    forward: &PathBundle,
    basis: &RegressionBasis,
) -> Result<Vec<NodeProjector>> {
    (0..forward.grid().len())
        .into_par_iter()
        .map(|i| {
            let [x, xi] = state_columns(forward, i);
            NodeProjector::fit(&[&x, &xi], basis)
        })
        .collect()
}

fn project_node(proj: &NodeProjector, forward: &PathBundle, i: usize, target: &[f64]) -> Vec<f64> {
    let [x, xi] = state_columns(forward, i);
    proj.project(&[&x, &xi], target)
}

/// Scatter per-node columns into a path-major surface.
fn to_surface(columns: Vec<Vec<f64>>, paths: usize) -> Vec<f64> {
    let nodes = columns.len();
    let mut out = vec![0.0; nodes * paths];
    for (i, col) in columns.into_iter().enumerate() {
        for (p, v) in col.into_iter().enumerate() {
            out[p * nodes + i] = v;
        }
    }
    out
}

/// Solve the singular BSDE along `forward` by Picard iteration.
pub fn picard_solve(
    driver: &dyn SingularDriver,
    forward: &PathBundle,
    basis: &RegressionBasis,
    options: &PicardOptions,
) -> Result<BsdeSolution> {
    iterate(driver, forward, basis, options.max_iter, Some(options.tol))
}

/// Exactly `iterations` Picard iterates from `Y⁰ ≡ 0`, without a stopping
/// test.
pub fn picard_iterates(
    driver: &dyn SingularDriver,
    forward: &PathBundle,
    basis: &RegressionBasis,
    iterations: usize,
) -> Result<BsdeSolution> {
    if iterations == 0 {
        return Err(Error::config("at least one Picard iteration is required"));
    }
    iterate(driver, forward, basis, iterations, None)
}

/// `stop = None` runs all `max_iter` iterations and returns the last one.
fn iterate(
    driver: &dyn SingularDriver,
    forward: &PathBundle,
    basis: &RegressionBasis,
    max_iter: usize,
    stop: Option<Option<f64>>,
) -> Result<BsdeSolution> {
    let control = forward.control();
    if !control.is_continuous() {
        return Err(Error::precondition(
            "Picard solver requires a control without atoms",
        ));
    }
    if driver.uses_z() && !forward.noise().is_brownian_only() {
        return Err(Error::UnsupportedFiltration);
    }
    let grid = forward.grid();
    let n = grid.len();
    let steps = grid.steps();
    let paths = forward.path_count();
    let dt = grid.dt();

    let terminal: Vec<f64> = (0..paths)
        .map(|p| driver.terminal(p, forward.state(p, steps)))
        .collect();
    if let Some(p) = terminal.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            path: p,
            node: steps,
            value: terminal[p],
        });
    }
    let tol = stop.map(|t| {
        t.unwrap_or_else(|| 1e-4 * (1.0 + (terminal.iter().sum::<f64>() / paths as f64).abs()))
    });

    let projectors = fit_projectors(forward, basis)?;
    let mut y = vec![0.0; n * paths];
    let mut z = vec![0.0; n * paths];
    let mut residuals = Vec::new();

    for k in 0..max_iter {
        let targets: Vec<Vec<f64>> = (0..paths)
            .into_par_iter()
            .map(|p| {
                let mut out = vec![0.0; n];
                let mut acc = terminal[p];
                out[steps] = acc;
                for i in (0..steps).rev() {
                    let a = DriverArgs {
                        path: p,
                        node: i,
                        t: grid.time(i),
                        x: forward.state(p, i),
                        xi: control.value(i),
                        y: y[p * n + i],
                        z: z[p * n + i],
                    };
                    acc += driver.singular(&a) * control.increment(i) + driver.drift(&a) * dt;
                    out[i] = acc;
                }
                out
            })
            .collect();

        let columns: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|i| {
                let target: Vec<f64> = targets.iter().map(|t| t[i]).collect();
                if i == steps {
                    target
                } else {
                    project_node(&projectors[i], forward, i, &target)
                }
            })
            .collect();
        let root_targets: Vec<f64> = targets.iter().map(|t| t[0]).collect();
        let next = to_surface(columns, paths);

        if let Some(k) = next.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                path: k / n,
                node: k % n,
                value: next[k],
            });
        }
        let residual = (0..n)
            .map(|i| {
                (0..paths)
                    .map(|p| (next[p * n + i] - y[p * n + i]).abs())
                    .sum::<f64>()
                    / paths as f64
            })
            .fold(0.0, f64::max);
        residuals.push(residual);
        y = next;
        if driver.uses_z() {
            z = z_from_surface(&y, forward, &projectors)?;
        }
        let done = match tol {
            Some(tol) => residual <= tol,
            None => k + 1 == max_iter,
        };
        if done {
            let iterations = residuals.len();
            return Ok(BsdeSolution {
                nodes: n,
                paths,
                y,
                z: driver.uses_z().then_some(z),
                residuals,
                iterations,
                root_targets,
            });
        }
    }
    Err(Error::PicardNonConvergence { residuals })
}

fn z_from_surface(
    y: &[f64],
    forward: &PathBundle,
    projectors: &[NodeProjector],
) -> Result<Vec<f64>> {
    let noise = forward.noise();
    if !noise.is_brownian_only() {
        return Err(Error::UnsupportedFiltration);
    }
    let grid = forward.grid();
    let n = grid.len();
    let steps = grid.steps();
    let paths = forward.path_count();
    let dt = grid.dt();
    let mut columns: Vec<Vec<f64>> = (0..steps)
        .into_par_iter()
        .map(|i| {
            let next: Vec<f64> = (0..paths).map(|p| y[p * n + i + 1]).collect();
            let fitted = project_node(&projectors[i], forward, i, &next);
            let weighted: Vec<f64> = (0..paths)
                .map(|p| (next[p] - fitted[p]) * noise.increment(p, i) / dt)
                .collect();
            project_node(&projectors[i], forward, i, &weighted)
        })
        .collect();
    // no increment leaves the terminal node; carry the last estimate
    let last = columns.last().cloned().unwrap_or_else(|| vec![0.0; paths]);
    columns.push(last);
    Ok(to_surface(columns, paths))
}

/// `Z(t_i) = E[(Y(t_{i+1}) - E[Y(t_{i+1}) | state]) ΔB_i / Δt | state]`,
/// path-major; the terminal node repeats the last step.
pub fn extract_z(
    solution: &BsdeSolution,
    forward: &PathBundle,
    basis: &RegressionBasis,
) -> Result<Vec<f64>> {
    if !forward.noise().is_brownian_only() {
        return Err(Error::UnsupportedFiltration);
    }
    if solution.nodes() != forward.grid().len() || solution.path_count() != forward.path_count() {
        return Err(Error::precondition(
            "solution and forward paths differ in shape",
        ));
    }
    let projectors = fit_projectors(forward, basis)?;
    z_from_surface(solution.y_surface(), forward, &projectors)
}

/// Declared Lipschitz data of a driver: `|g(y) - g(y')| ≤ C₁|y - y'|`,
/// `|b(y) - b(y')| ≤ C₂|y - y'|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LipschitzConstants {
    pub c1: f64,
    pub c2: f64,
    pub xi_total: f64,
    pub horizon: f64,
}

impl LipschitzConstants {
    /// `C₁ ξ(T) + C₂ T`.
    pub fn contraction_constant(&self) -> f64 {
        self.c1 * self.xi_total + self.c2 * self.horizon
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContractionVerdict {
    /// An iterate reproduced its predecessor exactly.
    Converged,
    /// Ratios are eventually below one.
    Contracting,
    NotContracting,
    /// Fewer than three residuals recorded.
    Insufficient,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContractionReport {
    /// `φ_{n+1} / φ_n`; `None` where `φ_n = 0`.
    pub ratios: Vec<Option<f64>>,
    /// Geometric mean of the tail ratios.
    pub rate: Option<f64>,
    pub verdict: ContractionVerdict,
    /// `φ_1 Lⁿ / n!` for `n = 0, 1, ...` when constants are declared.
    pub factorial_bound: Option<Vec<f64>>,
    /// Whether every residual sits below its factorial bound.
    pub bound_respected: Option<bool>,
}

pub fn contraction_diagnostics(
    residuals: &[f64],
    constants: Option<&LipschitzConstants>,
) -> ContractionReport {
    let ratios: Vec<Option<f64>> = residuals
        .windows(2)
        .map(|w| if w[0] > 0.0 { Some(w[1] / w[0]) } else { None })
        .collect();

    let converged = residuals.iter().skip(1).any(|&r| r == 0.0);
    let tail: Vec<f64> = {
        let start = ratios.len() / 2;
        ratios[start..].iter().flatten().copied().collect()
    };
    let rate = if tail.is_empty() {
        None
    } else {
        Some((tail.iter().map(|r| r.max(1e-300).ln()).sum::<f64>() / tail.len() as f64).exp())
    };
    let verdict = if converged {
        ContractionVerdict::Converged
    } else if residuals.len() < 3 {
        ContractionVerdict::Insufficient
    } else if tail.iter().all(|&r| r < 1.0) {
        ContractionVerdict::Contracting
    } else {
        ContractionVerdict::NotContracting
    };

    let (factorial_bound, bound_respected) = match (constants, residuals.first()) {
        (Some(c), Some(&phi1)) => {
            let l = c.contraction_constant();
            let mut term = phi1;
            let mut bound = Vec::with_capacity(residuals.len());
            for k in 0..residuals.len() {
                if k > 0 {
                    term *= l / k as f64;
                }
                bound.push(term);
            }
            let ok = residuals
                .iter()
                .zip(&bound)
                .all(|(r, b)| *r <= b * (1.0 + 1e-9) + 1e-15);
            (Some(bound), Some(ok))
        }
        _ => (None, None),
    };

    ContractionReport {
        ratios,
        rate,
        verdict,
        factorial_bound,
        bound_respected,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn verdicts() {
        assert_eq!(
            contraction_diagnostics(&[1.0, 0.0], None).verdict,
            ContractionVerdict::Converged
        );
        assert_eq!(
            contraction_diagnostics(&[1.0, 0.5], None).verdict,
            ContractionVerdict::Insufficient
        );
        assert_eq!(
            contraction_diagnostics(&[1.0, 0.5, 0.2, 0.05], None).verdict,
            ContractionVerdict::Contracting
        );
        assert_eq!(
            contraction_diagnostics(&[1.0, 3.0, 9.0, 27.0], None).verdict,
            ContractionVerdict::NotContracting
        );
    }

    #[test]
    fn factorial_bound_values() {
        let c = LipschitzConstants {
            c1: 0.5,
            c2: 0.0,
            xi_total: 1.0,
            horizon: 1.0,
        };
        let r = contraction_diagnostics(&[2.0, 0.9, 0.2], Some(&c));
        let b = r.factorial_bound.unwrap();
        assert_eq!(b, vec![2.0, 1.0, 0.25]);
        assert_eq!(r.bound_respected, Some(true));
        let r = contraction_diagnostics(&[2.0, 1.5, 0.2], Some(&c));
        assert_eq!(r.bound_respected, Some(false));
    }
}
