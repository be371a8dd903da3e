//! Forward simulation of the controlled cash flow.
//!
//! Two schemes share the step conventions of this crate: on each step the
//! diffusive and jump parts are applied first, then the continuous part of
//! `dξ` with the coefficient frozen at the left node, and finally any atom
//! declared at the right node, evaluated at the pre-jump state.

use std::sync::Arc;

use rayon::prelude::*;

use crate::control::SingularControl;
use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::noise::{LevySpec, NoiseBundle};

pub type Coefficient = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;
pub type JumpCoefficient = Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>;

/// Jump coefficient `β(t, x, ζ)` together with its compensator
/// `∫ β(t, x, ζ) ν(dζ)`.
#[derive(Clone)]
pub struct JumpTerm {
    pub beta: JumpCoefficient,
    pub compensator: Coefficient,
}

impl JumpTerm {
    /// `β(t, x, ζ) = γ(t, x) ζ`, compensated with the first moment of `ν`.
    pub fn linear(gamma: Coefficient, levy: &LevySpec) -> Self {
        let m = levy.first_moment();
        let g = gamma.clone();
        JumpTerm {
            beta: Arc::new(move |t, x, z| gamma(t, x) * z),
            compensator: Arc::new(move |t, x| g(t, x) * m),
        }
    }
}

/// Coefficients of `dX = b dt + σ dB + ∫β Ñ(dt,dζ) + θ dξ`.
#[derive(Clone)]
pub struct ForwardCoefficients {
    pub x0: f64,
    pub drift: Coefficient,
    pub diffusion: Coefficient,
    pub control: Coefficient,
    pub jump: Option<JumpTerm>,
}

fn constant(c: f64) -> Coefficient {
    Arc::new(move |_, _| c)
}

impl ForwardCoefficients {
    /// All coefficients zero except `θ ≡ -1`.
    pub fn new(x0: f64) -> Self {
        Self {
            x0,
            drift: constant(0.0),
            diffusion: constant(0.0),
            control: constant(-1.0),
            jump: None,
        }
    }

    /// Cash flow `dX = b dt + σ dB - dξ`.
    pub fn cash_flow(x0: f64, drift: Coefficient, diffusion: Coefficient) -> Self {
        Self {
            drift,
            diffusion,
            ..Self::new(x0)
        }
    }

    /// Relative consumption `dX = X (b0 dt + σ0 dB) - X dξ` with constant rates.
    pub fn geometric(x0: f64, b0: f64, sigma0: f64) -> Self {
        Self {
            x0,
            drift: Arc::new(move |_, x| b0 * x),
            diffusion: Arc::new(move |_, x| sigma0 * x),
            control: Arc::new(|_, x| -x),
            jump: None,
        }
    }

    pub fn with_drift(mut self, f: Coefficient) -> Self {
        self.drift = f;
        self
    }

    pub fn with_diffusion(mut self, f: Coefficient) -> Self {
        self.diffusion = f;
        self
    }

    pub fn with_control_coefficient(mut self, f: Coefficient) -> Self {
        self.control = f;
        self
    }

    pub fn with_jumps(mut self, jump: JumpTerm) -> Self {
        self.jump = Some(jump);
        self
    }
}

/// Simulated forward states, path-major, one value per node.
#[derive(Debug, Clone)]
pub struct PathBundle {
    grid: TimeGrid,
    states: Vec<f64>,
    noise: Arc<NoiseBundle>,
    control: SingularControl,
}

impl PathBundle {
    pub fn from_states(
        grid: TimeGrid,
        states: Vec<f64>,
        noise: Arc<NoiseBundle>,
        control: SingularControl,
    ) -> Self {
        assert_eq!(states.len(), grid.len() * noise.path_count());
        Self {
            grid,
            states,
            noise,
            control,
        }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn noise(&self) -> &Arc<NoiseBundle> {
        &self.noise
    }

    pub fn control(&self) -> &SingularControl {
        &self.control
    }

    pub fn path_count(&self) -> usize {
        self.noise.path_count()
    }

    pub fn path(&self, p: usize) -> &[f64] {
        let n = self.grid.len();
        &self.states[p * n..(p + 1) * n]
    }

    pub fn state(&self, p: usize, i: usize) -> f64 {
        self.states[p * self.grid.len() + i]
    }

    /// Cross-section `X(t_i)` over all paths.
    pub fn column(&self, i: usize) -> Vec<f64> {
        (0..self.path_count()).map(|p| self.state(p, i)).collect()
    }

    pub fn terminal_values(&self) -> Vec<f64> {
        self.column(self.grid.steps())
    }

    pub fn states(&self) -> &[f64] {
        &self.states
    }
}

fn check_shapes(control: &SingularControl, grid: &TimeGrid, noise: &NoiseBundle) -> Result<()> {
    if control.len() != grid.len() {
        return Err(Error::precondition(
            "control is not defined on the simulation grid",
        ));
    }
    if noise.steps() != grid.steps() || (noise.dt() - grid.dt()).abs() > 1e-12 * grid.dt() {
        return Err(Error::precondition(
            "noise bundle was sampled on a different grid",
        ));
    }
    Ok(())
}

/// Euler–Maruyama for `dX = b dt + σ dB + ∫β Ñ(dt,dζ) + θ dξ`.
pub fn simulate_forward(
    coeffs: &ForwardCoefficients,
    control: &SingularControl,
    grid: &TimeGrid,
    noise: Arc<NoiseBundle>,
) -> Result<PathBundle> {
    check_shapes(control, grid, &noise)?;
    let n = grid.len();
    let dt = grid.dt();
    let paths: Vec<Result<Vec<f64>>> = (0..noise.path_count())
        .into_par_iter()
        .map(|p| {
            let mut out = Vec::with_capacity(n);
            let mut x = coeffs.x0;
            let a0 = control.atom_at(0);
            if a0 != 0.0 {
                x += (coeffs.control)(0.0, x) * a0;
            }
            out.push(x);
            let jumps = noise.jumps(p);
            let mut next_jump = 0;
            for i in 0..grid.steps() {
                let t = grid.time(i);
                let mut y = x
                    + (coeffs.drift)(t, x) * dt
                    + (coeffs.diffusion)(t, x) * noise.increment(p, i);
                if let Some(jt) = &coeffs.jump {
                    while next_jump < jumps.len() && jumps[next_jump].step == i {
                        y += (jt.beta)(t, x, jumps[next_jump].mark);
                        next_jump += 1;
                    }
                    y -= (jt.compensator)(t, x) * dt;
                }
                y += (coeffs.control)(t, x) * control.continuous_increment(i);
                let atom = control.atom_at(i + 1);
                if atom != 0.0 {
                    y += (coeffs.control)(grid.time(i + 1), y) * atom;
                }
                if !y.is_finite() {
                    return Err(Error::NonFinite {
                        path: p,
                        node: i + 1,
                        value: y,
                    });
                }
                x = y;
                out.push(x);
            }
            Ok(out)
        })
        .collect();
    let mut states = Vec::with_capacity(n * noise.path_count());
    for p in paths {
        states.extend(p?);
    }
    Ok(PathBundle {
        grid: grid.clone(),
        states,
        noise,
        control: control.clone(),
    })
}

/// Per-node rate paths for the relative-consumption model.
#[derive(Debug, Clone, PartialEq)]
pub struct GeometricModel {
    pub x0: f64,
    pub drift: Vec<f64>,
    pub volatility: Vec<f64>,
}

impl GeometricModel {
    pub fn constant(grid: &TimeGrid, x0: f64, b0: f64, sigma0: f64) -> Self {
        Self {
            x0,
            drift: vec![b0; grid.len()],
            volatility: vec![sigma0; grid.len()],
        }
    }
}

/// Log-space scheme for `dX = X (b0 dt + σ0 dB) - X(t⁻) dξ`:
/// `X(t) = x exp(∫(b0 - σ0²/2)dt + ∫σ0 dB - ξ_c(t)) Π(1 - Δξ)`.
pub fn simulate_geometric_consumption(
    model: &GeometricModel,
    control: &SingularControl,
    grid: &TimeGrid,
    noise: Arc<NoiseBundle>,
) -> Result<PathBundle> {
    check_shapes(control, grid, &noise)?;
    if model.drift.len() != grid.len() || model.volatility.len() != grid.len() {
        return Err(Error::precondition(
            "rate paths must have one value per node",
        ));
    }
    if !(model.x0 > 0.0) {
        return Err(Error::precondition("initial cash flow must be positive"));
    }
    control
        .validate()
        .map_err(|v| Error::precondition(format!("inadmissible control: {v}")))?;
    if !noise.is_brownian_only() {
        return Err(Error::precondition(
            "geometric consumption model takes Brownian noise only",
        ));
    }
    for a in control.atoms() {
        if a.size >= 1.0 {
            return Err(Error::precondition(format!(
                "atom {} at node {} consumes the whole cash flow",
                a.size, a.node
            )));
        }
    }

    let dt = grid.dt();
    let n = grid.len();
    // deterministic part of the log increment, shared by all paths
    let log_drift: Vec<f64> = (0..grid.steps())
        .map(|i| {
            let s = model.volatility[i];
            (model.drift[i] - 0.5 * s * s) * dt - control.continuous_increment(i)
                + (1.0 - control.atom_at(i + 1)).ln()
        })
        .collect();
    let log_x0 = model.x0.ln() + (1.0 - control.atom_at(0)).ln();

    let paths: Vec<Result<Vec<f64>>> = (0..noise.path_count())
        .into_par_iter()
        .map(|p| {
            let mut out = Vec::with_capacity(n);
            let mut lx = log_x0;
            out.push(lx.exp());
            for i in 0..grid.steps() {
                lx += log_drift[i] + model.volatility[i] * noise.increment(p, i);
                let x = lx.exp();
                if !x.is_finite() {
                    return Err(Error::NonFinite {
                        path: p,
                        node: i + 1,
                        value: x,
                    });
                }
                out.push(x);
            }
            Ok(out)
        })
        .collect();
    let mut states = Vec::with_capacity(n * noise.path_count());
    for p in paths {
        states.extend(p?);
    }
    Ok(PathBundle {
        grid: grid.clone(),
        states,
        noise,
        control: control.clone(),
    })
}
