//! Singular forward-backward control problems and their maximum principle:
//! Hamiltonian, adjoint processes `λ` and `(p, q)`, the variational
//! inequality check and directional derivatives of the objective.
//!
//! The system is
//! `dX = b dt + σ dB + θ dξ`,
//! `dY = -g₁(t,X,Y,Z,ξ) dt - g₂(t,Y,ξ) dξ + Z dB`, `Y(T) = h(X(T))`,
//! with objective `J(ξ) = E[∫f(t,X) dt + φ(X(T))] + ψ(Y(0))`.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bsde::{
    extract_z, picard_solve, BsdeSolution, DriverArgs, PicardOptions, SingularDriver,
};
use crate::control::SingularControl;
use crate::error::{Error, Result};
use crate::forward::{simulate_geometric_consumption, GeometricModel, PathBundle};
use crate::grid::TimeGrid;
use crate::linear::mean_and_se;
use crate::noise::NoiseBundle;
use crate::regression::RegressionBasis;
use crate::stieltjes::stieltjes_sum;

/// Coefficients of a singular control problem with their first partials.
/// Concavity of `h`, `φ`, `ψ` and `ψ' ≥ 0` are the caller's declaration.
pub trait ControlProblem: Sync {
    fn x0(&self) -> f64;

    fn b(&self, t: f64, x: f64) -> f64;
    fn b_x(&self, t: f64, x: f64) -> f64;
    fn sigma(&self, t: f64, x: f64) -> f64;
    fn sigma_x(&self, t: f64, x: f64) -> f64;
    fn theta(&self, t: f64, x: f64) -> f64;
    fn theta_x(&self, t: f64, x: f64) -> f64;

    fn g1(&self, _t: f64, _x: f64, _y: f64, _z: f64, _xi: f64) -> f64 {
        0.0
    }
    fn g1_x(&self, _t: f64, _x: f64, _y: f64, _z: f64, _xi: f64) -> f64 {
        0.0
    }
    fn g1_y(&self, _t: f64, _x: f64, _y: f64, _z: f64, _xi: f64) -> f64 {
        0.0
    }
    fn g1_z(&self, _t: f64, _x: f64, _y: f64, _z: f64, _xi: f64) -> f64 {
        0.0
    }
    fn g1_xi(&self, _t: f64, _x: f64, _y: f64, _z: f64, _xi: f64) -> f64 {
        0.0
    }

    fn g2(&self, t: f64, y: f64, xi: f64) -> f64;
    fn g2_y(&self, t: f64, y: f64, xi: f64) -> f64;
    fn g2_xi(&self, _t: f64, _y: f64, _xi: f64) -> f64 {
        0.0
    }

    fn f(&self, _t: f64, _x: f64) -> f64 {
        0.0
    }
    fn f_x(&self, _t: f64, _x: f64) -> f64 {
        0.0
    }
    fn phi(&self, _x: f64) -> f64 {
        0.0
    }
    fn phi_x(&self, _x: f64) -> f64 {
        0.0
    }
    fn psi(&self, y: f64) -> f64 {
        y
    }
    fn psi_y(&self, _y: f64) -> f64 {
        1.0
    }
    fn h(&self, x: f64) -> f64;
    fn h_x(&self, x: f64) -> f64;

    /// Whether `g₁` reads `z`.
    fn g1_uses_z(&self) -> bool {
        false
    }
    /// Whether `σ` depends on `x`, making the `p` equation read `q`.
    fn sigma_depends_on_x(&self) -> bool {
        true
    }
    /// Whether `g₁` or `g₂` depends on `ξ`.
    fn g_depends_on_xi(&self) -> bool {
        false
    }

    /// Forward paths for `control`; Euler by default.
    fn simulate(
        &self,
        control: &SingularControl,
        grid: &TimeGrid,
        noise: Arc<NoiseBundle>,
    ) -> Result<PathBundle> {
        euler_paths(self, control, grid, noise)
    }
}

fn euler_paths<P: ControlProblem + ?Sized>(
    problem: &P,
    control: &SingularControl,
    grid: &TimeGrid,
    noise: Arc<NoiseBundle>,
) -> Result<PathBundle> {
    if !noise.is_brownian_only() {
        return Err(Error::UnsupportedFiltration);
    }
    if control.len() != grid.len() || noise.steps() != grid.steps() {
        return Err(Error::precondition("control, noise and grid disagree"));
    }
    let n = grid.len();
    let dt = grid.dt();
    let rows: Vec<Result<Vec<f64>>> = (0..noise.path_count())
        .into_par_iter()
        .map(|p| {
            let mut out = Vec::with_capacity(n);
            let mut x = problem.x0();
            x += problem.theta(0.0, x) * control.atom_at(0);
            out.push(x);
            for i in 0..grid.steps() {
                let t = grid.time(i);
                let mut y = x
                    + problem.b(t, x) * dt
                    + problem.sigma(t, x) * noise.increment(p, i)
                    + problem.theta(t, x) * control.continuous_increment(i);
                let atom = control.atom_at(i + 1);
                if atom != 0.0 {
                    y += problem.theta(grid.time(i + 1), y) * atom;
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
    for r in rows {
        states.extend(r?);
    }
    Ok(PathBundle::from_states(
        grid.clone(),
        states,
        noise,
        control.clone(),
    ))
}

/// Scalar utility used for `h`, `φ` and `ψ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Utility {
    Zero,
    Affine {
        intercept: f64,
        slope: f64,
    },
    /// `weight · (1 - e^{-x})`.
    Exponential {
        weight: f64,
    },
}

impl Utility {
    pub fn linear(slope: f64) -> Self {
        Utility::Affine {
            intercept: 0.0,
            slope,
        }
    }

    pub fn value(&self, x: f64) -> f64 {
        match *self {
            Utility::Zero => 0.0,
            Utility::Affine { intercept, slope } => intercept + slope * x,
            Utility::Exponential { weight } => weight * (1.0 - (-x).exp()),
        }
    }

    pub fn derivative(&self, x: f64) -> f64 {
        match *self {
            Utility::Zero => 0.0,
            Utility::Affine { slope, .. } => slope,
            Utility::Exponential { weight } => weight * (-x).exp(),
        }
    }
}

/// Forward dynamics of a [`StandardProblem`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ForwardModel {
    /// `b = b0 + b1 x`, `σ = s0 + s1 x`, `θ = θ0 + θ1 x`.
    Affine {
        x0: f64,
        b0: f64,
        b1: f64,
        s0: f64,
        s1: f64,
        theta0: f64,
        theta1: f64,
    },
    /// `dX = X (b0 dt + σ0 dB) - X(t⁻) dξ`, simulated in log space.
    Geometric { x0: f64, b0: f64, sigma0: f64 },
}

/// `g₁ = k + a y + d z`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunningDriver {
    #[serde(default)]
    pub k: f64,
    #[serde(default)]
    pub a: f64,
    #[serde(default)]
    pub d: f64,
}

/// `g₂ = φ + α y + c ξ`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SingularRate {
    #[serde(default)]
    pub phi: f64,
    #[serde(default)]
    pub alpha: f64,
    #[serde(default)]
    pub c: f64,
}

/// Problem with affine or geometric dynamics, affine drivers and scalar
/// utilities; running reward `f(t, x) = running · x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StandardProblem {
    pub forward: ForwardModel,
    pub g1: RunningDriver,
    pub g2: SingularRate,
    pub h: Utility,
    pub phi: Utility,
    pub psi: Utility,
    pub running: f64,
}

impl StandardProblem {
    /// Relative consumption with recursive utility `dY = -αY dξ + Z dB`,
    /// `Y(T) = h(X(T))`, objective `Y(0)`.
    pub fn consumption(x0: f64, b0: f64, sigma0: f64, alpha: f64, h: Utility) -> Self {
        Self {
            forward: ForwardModel::Geometric { x0, b0, sigma0 },
            g1: RunningDriver::default(),
            g2: SingularRate {
                phi: 0.0,
                alpha,
                c: 0.0,
            },
            h,
            phi: Utility::Zero,
            psi: Utility::linear(1.0),
            running: 0.0,
        }
    }

    fn affine(&self) -> (f64, f64, f64, f64, f64, f64) {
        match self.forward {
            ForwardModel::Affine {
                b0,
                b1,
                s0,
                s1,
                theta0,
                theta1,
                ..
            } => (b0, b1, s0, s1, theta0, theta1),
            ForwardModel::Geometric { b0, sigma0, .. } => (0.0, b0, 0.0, sigma0, 0.0, -1.0),
        }
    }
}

impl ControlProblem for StandardProblem {
    fn x0(&self) -> f64 {
        match self.forward {
            ForwardModel::Affine { x0, .. } | ForwardModel::Geometric { x0, .. } => x0,
        }
    }
    fn b(&self, _t: f64, x: f64) -> f64 {
        let (b0, b1, ..) = self.affine();
        b0 + b1 * x
    }
    fn b_x(&self, _t: f64, _x: f64) -> f64 {
        self.affine().1
    }
    fn sigma(&self, _t: f64, x: f64) -> f64 {
        let (_, _, s0, s1, ..) = self.affine();
        s0 + s1 * x
    }
    fn sigma_x(&self, _t: f64, _x: f64) -> f64 {
        self.affine().3
    }
    fn theta(&self, _t: f64, x: f64) -> f64 {
        let (.., t0, t1) = self.affine();
        t0 + t1 * x
    }
    fn theta_x(&self, _t: f64, _x: f64) -> f64 {
        self.affine().5
    }
    fn g1(&self, _t: f64, _x: f64, y: f64, z: f64, _xi: f64) -> f64 {
        self.g1.k + self.g1.a * y + self.g1.d * z
    }
    fn g1_y(&self, _t: f64, _x: f64, _y: f64, _z: f64, _xi: f64) -> f64 {
        self.g1.a
    }
    fn g1_z(&self, _t: f64, _x: f64, _y: f64, _z: f64, _xi: f64) -> f64 {
        self.g1.d
    }
    fn g2(&self, _t: f64, y: f64, xi: f64) -> f64 {
        self.g2.phi + self.g2.alpha * y + self.g2.c * xi
    }
    fn g2_y(&self, _t: f64, _y: f64, _xi: f64) -> f64 {
        self.g2.alpha
    }
    fn g2_xi(&self, _t: f64, _y: f64, _xi: f64) -> f64 {
        self.g2.c
    }
    fn f(&self, _t: f64, x: f64) -> f64 {
        self.running * x
    }
    fn f_x(&self, _t: f64, _x: f64) -> f64 {
        self.running
    }
    fn phi(&self, x: f64) -> f64 {
        self.phi.value(x)
    }
    fn phi_x(&self, x: f64) -> f64 {
        self.phi.derivative(x)
    }
    fn psi(&self, y: f64) -> f64 {
        self.psi.value(y)
    }
    fn psi_y(&self, y: f64) -> f64 {
        self.psi.derivative(y)
    }
    fn h(&self, x: f64) -> f64 {
        self.h.value(x)
    }
    fn h_x(&self, x: f64) -> f64 {
        self.h.derivative(x)
    }
    fn g1_uses_z(&self) -> bool {
        self.g1.d != 0.0
    }
    fn sigma_depends_on_x(&self) -> bool {
        self.affine().3 != 0.0
    }
    fn g_depends_on_xi(&self) -> bool {
        self.g2.c != 0.0
    }
    fn simulate(
        &self,
        control: &SingularControl,
        grid: &TimeGrid,
        noise: Arc<NoiseBundle>,
    ) -> Result<PathBundle> {
        match self.forward {
            ForwardModel::Geometric { x0, b0, sigma0 } => simulate_geometric_consumption(
                &GeometricModel::constant(grid, x0, b0, sigma0),
                control,
                grid,
                noise,
            ),
            ForwardModel::Affine { .. } => euler_paths(self, control, grid, noise),
        }
    }
}

/// `(H₁, H₂)` with `H₁ = f + bp + σq + λg₁` and `H₂ = pθ + λg₂`.
#[allow(clippy::too_many_arguments)]
pub fn hamiltonian<P: ControlProblem + ?Sized>(
    problem: &P,
    t: f64,
    x: f64,
    y: f64,
    z: f64,
    xi: f64,
    p: f64,
    q: f64,
    lambda: f64,
) -> (f64, f64) {
    let h1 = problem.f(t, x)
        + problem.b(t, x) * p
        + problem.sigma(t, x) * q
        + lambda * problem.g1(t, x, y, z, xi);
    let h2 = p * problem.theta(t, x) + lambda * problem.g2(t, y, xi);
    (h1, h2)
}

/// Driver of the utility equation `dY = -g₁ dt - g₂ dξ + Z dB`, `Y(T) = h(X(T))`.
pub struct UtilityDriver<'a, P: ?Sized> {
    pub problem: &'a P,
}

impl<P: ControlProblem + ?Sized> SingularDriver for UtilityDriver<'_, P> {
    fn singular(&self, a: &DriverArgs) -> f64 {
        self.problem.g2(a.t, a.y, a.xi)
    }
    fn drift(&self, a: &DriverArgs) -> f64 {
        self.problem.g1(a.t, a.x, a.y, a.z, a.xi)
    }
    fn terminal(&self, _path: usize, x: f64) -> f64 {
        self.problem.h(x)
    }
    fn uses_z(&self) -> bool {
        self.problem.g1_uses_z()
    }
}

/// Recursive utility `Y` along `forward`.
pub fn solve_utility<P: ControlProblem + ?Sized>(
    problem: &P,
    forward: &PathBundle,
    basis: &RegressionBasis,
    options: &PicardOptions,
) -> Result<BsdeSolution> {
    picard_solve(&UtilityDriver { problem }, forward, basis, options)
}

/// `λ` per path and node, path-major, from
/// `dλ = λ(∂g₁/∂y dt + ∂g₂/∂y dξ + ∂g₁/∂z dB)`, `λ(0) = ψ'(Y(0))`,
/// integrated exactly over each step with frozen coefficients.
pub fn simulate_lambda<P: ControlProblem + ?Sized>(
    problem: &P,
    forward: &PathBundle,
    y: &BsdeSolution,
) -> Result<Vec<f64>> {
    let grid = forward.grid();
    let control = forward.control();
    let n = grid.len();
    let dt = grid.dt();
    if problem.g1_uses_z() && y.z_surface().is_none() {
        return Err(Error::precondition("λ needs Z when g₁ depends on z"));
    }
    let lambda0 = problem.psi_y(y.y0());
    let rows: Vec<Result<Vec<f64>>> = (0..forward.path_count())
        .into_par_iter()
        .map(|p| {
            let mut log = 0.0;
            let mut out = Vec::with_capacity(n);
            out.push(lambda0);
            for i in 0..grid.steps() {
                let t = grid.time(i);
                let (x, yy, xi) = (forward.state(p, i), y.y(p, i), control.value(i));
                let z = y.z(p, i).unwrap_or(0.0);
                let gy = problem.g1_y(t, x, yy, z, xi);
                let gz = problem.g1_z(t, x, yy, z, xi);
                let mut step = problem.g2_y(t, yy, xi) * control.increment(i);
                if gy != 0.0 || gz != 0.0 {
                    step += gy * dt + gz * forward.noise().increment(p, i) - 0.5 * gz * gz * dt;
                }
                log += step;
                let v = lambda0 * log.exp();
                if !v.is_finite() {
                    return Err(Error::NonFinite {
                        path: p,
                        node: i + 1,
                        value: v,
                    });
                }
                out.push(v);
            }
            Ok(out)
        })
        .collect();
    let mut out = Vec::with_capacity(n * forward.path_count());
    for r in rows {
        out.extend(r?);
    }
    Ok(out)
}

struct AdjointDriver<'a, P: ?Sized> {
    problem: &'a P,
    forward: &'a PathBundle,
    y: &'a BsdeSolution,
    lambda: &'a [f64],
}

impl<P: ControlProblem + ?Sized> AdjointDriver<'_, P> {
    fn lambda(&self, p: usize, i: usize) -> f64 {
        self.lambda[p * self.forward.grid().len() + i]
    }
}

impl<P: ControlProblem + ?Sized> SingularDriver for AdjointDriver<'_, P> {
    // ∂H₂/∂x; g₂ does not depend on x
    fn singular(&self, a: &DriverArgs) -> f64 {
        a.y * self.problem.theta_x(a.t, a.x)
    }
    // ∂H₁/∂x, with the adjoint q in place of z
    fn drift(&self, a: &DriverArgs) -> f64 {
        let pr = self.problem;
        let (yy, zz) = (
            self.y.y(a.path, a.node),
            self.y.z(a.path, a.node).unwrap_or(0.0),
        );
        pr.f_x(a.t, a.x)
            + pr.b_x(a.t, a.x) * a.y
            + pr.sigma_x(a.t, a.x) * a.z
            + self.lambda(a.path, a.node) * pr.g1_x(a.t, a.x, yy, zz, a.xi)
    }
    fn terminal(&self, path: usize, x: f64) -> f64 {
        let last = self.forward.grid().steps();
        self.problem.phi_x(x) + self.lambda(path, last) * self.problem.h_x(x)
    }
    fn uses_z(&self) -> bool {
        self.problem.sigma_depends_on_x()
    }
}

/// `(p, q)` from `dp = -∂H₁/∂x dt - ∂H₂/∂x dξ + q dB`,
/// `p(T) = φ'(X(T)) + λ(T) h'(X(T))`. The returned solution carries `q` as
/// its `Z` surface.
pub fn solve_adjoint_p<P: ControlProblem + ?Sized>(
    problem: &P,
    forward: &PathBundle,
    y: &BsdeSolution,
    lambda: &[f64],
    basis: &RegressionBasis,
    options: &PicardOptions,
) -> Result<BsdeSolution> {
    let driver = AdjointDriver {
        problem,
        forward,
        y,
        lambda,
    };
    let mut sol = picard_solve(&driver, forward, basis, options)?;
    if sol.z_surface().is_none() {
        let q = extract_z(&sol, forward, basis)?;
        sol.set_z(q);
    }
    Ok(sol)
}

/// Forward state, utility and adjoints along one control.
#[derive(Debug, Clone)]
pub struct SystemState {
    pub forward: PathBundle,
    pub y: BsdeSolution,
    /// `λ`, path-major.
    pub lambda: Vec<f64>,
    /// `p` with `q` as its `Z` surface.
    pub p: BsdeSolution,
}

impl SystemState {
    pub fn lambda(&self, p: usize, i: usize) -> f64 {
        self.lambda[p * self.forward.grid().len() + i]
    }

    /// `H₂ = pθ + λg₂` per path and node, path-major.
    pub fn barrier<P: ControlProblem + ?Sized>(&self, problem: &P) -> Vec<f64> {
        self.barrier_terms(problem)
            .into_iter()
            .map(|(a, b)| a + b)
            .collect()
    }

    /// `(pθ, λg₂)` per path and node, path-major.
    pub fn barrier_terms<P: ControlProblem + ?Sized>(&self, problem: &P) -> Vec<(f64, f64)> {
        let grid = self.forward.grid();
        let control = self.forward.control();
        let n = grid.len();
        let mut out = Vec::with_capacity(n * self.forward.path_count());
        for path in 0..self.forward.path_count() {
            for i in 0..n {
                let t = grid.time(i);
                let x = self.forward.state(path, i);
                out.push((
                    self.p.y(path, i) * problem.theta(t, x),
                    self.lambda(path, i) * problem.g2(t, self.y.y(path, i), control.value(i)),
                ));
            }
        }
        out
    }

    /// Size of the barrier's terms, `max_i mean(|pθ| + |λg₂|)`; the barrier
    /// itself vanishes on the boundary and is no scale there.
    pub fn barrier_scale<P: ControlProblem + ?Sized>(&self, problem: &P) -> f64 {
        let n = self.forward.grid().len();
        let paths = self.forward.path_count();
        let terms = self.barrier_terms(problem);
        (0..n)
            .map(|i| {
                (0..paths)
                    .map(|p| terms[p * n + i].0.abs() + terms[p * n + i].1.abs())
                    .sum::<f64>()
                    / paths as f64
            })
            .fold(0.0f64, f64::max)
    }
}

/// Simulate `X`, solve `Y`, then `λ` and `(p, q)`.
pub fn solve_system<P: ControlProblem + ?Sized>(
    problem: &P,
    control: &SingularControl,
    grid: &TimeGrid,
    noise: Arc<NoiseBundle>,
    basis: &RegressionBasis,
    options: &PicardOptions,
) -> Result<SystemState> {
    let forward = problem.simulate(control, grid, noise)?;
    let y = solve_utility(problem, &forward, basis, options)?;
    let lambda = simulate_lambda(problem, &forward, &y)?;
    let p = solve_adjoint_p(problem, &forward, &y, &lambda, basis, options)?;
    Ok(SystemState {
        forward,
        y,
        lambda,
        p,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViReport {
    /// `sup_i mean_p (H₂)⁺`.
    pub max_excess: f64,
    /// `mean_p |∫ H₂ dξ|`.
    pub complementarity_residual: f64,
    /// `mean_p (H₂)⁺` per node.
    pub excess: Vec<f64>,
    /// `mean_p H₂` and its standard error per node.
    pub barrier_mean: Vec<f64>,
    pub barrier_se: Vec<f64>,
    /// `mean_p |∫_0^{t_i} H₂ dξ|` per node.
    pub complementarity: Vec<f64>,
    pub tol: f64,
    pub consistent: bool,
}

/// Test `H₂ ≤ 0` and `H₂ dξ = 0` on the simulated paths.
pub fn check_variational_inequality<P: ControlProblem + ?Sized>(
    problem: &P,
    state: &SystemState,
    tol: f64,
) -> Result<ViReport> {
    if problem.g_depends_on_xi() {
        return Err(Error::Unsupported(
            "the complementarity form needs drivers that do not depend on ξ".into(),
        ));
    }
    let s = state.barrier(problem);
    Ok(vi_report_from_barrier(
        &s,
        state.forward.grid().len(),
        state.forward.control(),
        tol,
    ))
}

pub(crate) fn vi_report_from_barrier(
    s: &[f64],
    n: usize,
    control: &SingularControl,
    tol: f64,
) -> ViReport {
    let paths = s.len() / n;
    let mut excess = Vec::with_capacity(n);
    let mut barrier_mean = Vec::with_capacity(n);
    let mut barrier_se = Vec::with_capacity(n);
    for i in 0..n {
        let col: Vec<f64> = (0..paths).map(|p| s[p * n + i]).collect();
        let (m, se) = mean_and_se(&col);
        barrier_mean.push(m);
        barrier_se.push(se);
        excess.push(col.iter().map(|v| v.max(0.0)).sum::<f64>() / paths as f64);
    }
    let mut running = vec![0.0; paths];
    let mut complementarity = Vec::with_capacity(n);
    for (p, r) in running.iter_mut().enumerate() {
        *r = s[p * n] * control.value(0);
    }
    complementarity.push(running.iter().map(|v| v.abs()).sum::<f64>() / paths as f64);
    for i in 0..n - 1 {
        let d = control.increment(i);
        for (p, r) in running.iter_mut().enumerate() {
            *r += s[p * n + i] * d;
        }
        complementarity.push(running.iter().map(|v| v.abs()).sum::<f64>() / paths as f64);
    }
    let max_excess = excess.iter().fold(0.0f64, |a, &b| a.max(b));
    let complementarity_residual = *complementarity.last().unwrap_or(&0.0);
    ViReport {
        max_excess,
        complementarity_residual,
        excess,
        barrier_mean,
        barrier_se,
        complementarity,
        tol,
        consistent: max_excess < tol && complementarity_residual < tol,
    }
}

/// Objective value with per-path contributions whose mean is `J`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveValue {
    pub value: f64,
    pub contributions: Vec<f64>,
    pub y0: f64,
}

/// `J(ξ)` on the given noise. `ψ(Y(0))` is linearized per path around the
/// sample value so the contributions can carry standard errors.
pub fn evaluate_objective<P: ControlProblem + ?Sized>(
    problem: &P,
    control: &SingularControl,
    grid: &TimeGrid,
    noise: Arc<NoiseBundle>,
    basis: &RegressionBasis,
    options: &PicardOptions,
) -> Result<ObjectiveValue> {
    let forward = problem.simulate(control, grid, noise)?;
    let y = solve_utility(problem, &forward, basis, options)?;
    Ok(objective_from(problem, &forward, &y))
}

/// `J` from an already solved utility `y` along `forward`.
pub fn objective_from<P: ControlProblem + ?Sized>(
    problem: &P,
    forward: &PathBundle,
    y: &BsdeSolution,
) -> ObjectiveValue {
    let grid = forward.grid();
    let dt = grid.dt();
    let y0 = y.y0();
    let psi0 = problem.psi(y0);
    let dpsi = problem.psi_y(y0);
    let contributions: Vec<f64> = (0..forward.path_count())
        .map(|p| {
            let running: f64 = (0..grid.steps())
                .map(|i| problem.f(grid.time(i), forward.state(p, i)) * dt)
                .sum();
            running
                + problem.phi(forward.state(p, grid.steps()))
                + psi0
                + dpsi * (y.root_targets()[p] - y0)
        })
        .collect();
    let value = contributions.iter().sum::<f64>() / contributions.len() as f64;
    ObjectiveValue {
        value,
        contributions,
        y0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GateauxOptions {
    /// Decreasing step sizes; the last two are combined by Richardson
    /// extrapolation.
    pub steps: Vec<f64>,
    /// Picard settings for the objective evaluations; tight, since the
    /// difference quotients divide by the step.
    pub picard: PicardOptions,
}

impl Default for GateauxOptions {
    fn default() -> Self {
        Self {
            steps: vec![1e-2, 5e-3],
            picard: PicardOptions {
                tol: Some(1e-12),
                max_iter: 200,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateauxResult {
    /// Richardson-extrapolated difference quotient.
    pub numeric: f64,
    pub numeric_se: f64,
    /// One-sided quotient for each step.
    pub quotients: Vec<(f64, f64)>,
    /// `E[∫H₂ dβ + ∫β λ (∂g₂/∂ξ dξ + ∂g₁/∂ξ dt)]`.
    pub analytic: f64,
    pub analytic_se: f64,
}

/// Check that `ξ + aβ` is admissible for every step.
pub fn check_variation(
    control: &SingularControl,
    beta: &SingularControl,
    steps: &[f64],
) -> Result<()> {
    if beta.len() != control.len() {
        return Err(Error::Inadmissible(
            "variation lives on a different grid".into(),
        ));
    }
    for &a in steps {
        if !(a > 0.0) {
            return Err(Error::config(format!("step {a} must be positive")));
        }
        if let Err(v) = control.perturbed(a, beta).validate() {
            return Err(Error::Inadmissible(format!("ξ + {a}·β: {v}")));
        }
    }
    Ok(())
}

/// Directional derivative of `J` at `control` along `beta`, numerically
/// on common random numbers and from the adjoint expression.
#[allow(clippy::too_many_arguments)]
pub fn gateaux_derivative<P: ControlProblem + ?Sized>(
    problem: &P,
    control: &SingularControl,
    beta: &SingularControl,
    grid: &TimeGrid,
    noise: Arc<NoiseBundle>,
    basis: &RegressionBasis,
    options: &GateauxOptions,
    state: Option<&SystemState>,
) -> Result<GateauxResult> {
    if options.steps.is_empty() {
        return Err(Error::config("at least one step is needed"));
    }
    check_variation(control, beta, &options.steps)?;

    let controls: Vec<SingularControl> = std::iter::once(control.clone())
        .chain(options.steps.iter().map(|&a| control.perturbed(a, beta)))
        .collect();
    let values: Vec<ObjectiveValue> = controls
        .par_iter()
        .map(|c| evaluate_objective(problem, c, grid, noise.clone(), basis, &options.picard))
        .collect::<Result<_>>()?;

    let base = &values[0];
    let per_path_quotient = |k: usize| -> Vec<f64> {
        let a = options.steps[k];
        values[k + 1]
            .contributions
            .iter()
            .zip(&base.contributions)
            .map(|(u, v)| (u - v) / a)
            .collect()
    };
    let quotients: Vec<(f64, f64)> = (0..options.steps.len())
        .map(|k| {
            (
                options.steps[k],
                (values[k + 1].value - base.value) / options.steps[k],
            )
        })
        .collect();
    let combined: Vec<f64> = if options.steps.len() == 1 {
        per_path_quotient(0)
    } else {
        let k = options.steps.len() - 1;
        let (a1, a2) = (options.steps[k - 1], options.steps[k]);
        let (d1, d2) = (per_path_quotient(k - 1), per_path_quotient(k));
        d1.iter()
            .zip(&d2)
            .map(|(u, v)| (a1 * v - a2 * u) / (a1 - a2))
            .collect()
    };
    let (numeric, numeric_se) = mean_and_se(&combined);

    let owned;
    let state = match state {
        Some(s) => s,
        None => {
            owned = solve_system(problem, control, grid, noise, basis, &options.picard)?;
            &owned
        }
    };
    let (analytic, analytic_se) = analytic_gateaux(problem, state, beta);
    Ok(GateauxResult {
        numeric,
        numeric_se,
        quotients,
        analytic,
        analytic_se,
    })
}

/// Per-path `∫H₂ dβ + ∫β λ (∂g₂/∂ξ dξ + ∂g₁/∂ξ dt)`, mean and standard error.
pub fn analytic_gateaux<P: ControlProblem + ?Sized>(
    problem: &P,
    state: &SystemState,
    beta: &SingularControl,
) -> (f64, f64) {
    let grid = state.forward.grid();
    let control = state.forward.control();
    let n = grid.len();
    let dt = grid.dt();
    let h2 = state.barrier(problem);
    let per_path: Vec<f64> = (0..state.forward.path_count())
        .map(|p| {
            let mut v = stieltjes_sum(&h2[p * n..(p + 1) * n], beta, 0, grid.steps());
            for i in 0..grid.steps() {
                let t = grid.time(i);
                let (x, y, xi) = (state.forward.state(p, i), state.y.y(p, i), control.value(i));
                let z = state.y.z(p, i).unwrap_or(0.0);
                let lam = state.lambda(p, i);
                v += beta.value(i)
                    * lam
                    * (problem.g2_xi(t, y, xi) * control.increment(i)
                        + problem.g1_xi(t, x, y, z, xi) * dt);
            }
            v
        })
        .collect();
    mean_and_se(&per_path)
}

/// Jump-sum correction terms of the directional derivative for a path with
/// atoms, evaluated from left-limit node values:
/// `-Σ_{T_β} g₂ y ∂H₁/∂y Δξ Δβ - Σ_T (∂g₂/∂y y + ∂g₂/∂ξ β) ∂H₁/∂y (Δξ)²`.
/// `ydot` is the derivative process of `Y` along the variation.
pub fn jump_correction(
    control: &SingularControl,
    beta: &SingularControl,
    g2: &[f64],
    g2_y: &[f64],
    g2_xi: &[f64],
    h1_y: &[f64],
    ydot: &[f64],
) -> f64 {
    let mut total = 0.0;
    for a in control.atoms() {
        if a.node == 0 || a.size == 0.0 {
            continue;
        }
        let k = a.node - 1;
        let db = beta.atom_at(a.node);
        if db != 0.0 {
            total -= g2[k] * ydot[k] * h1_y[k] * a.size * db;
        }
        total -= (g2_y[k] * ydot[k] + g2_xi[k] * beta.value(k)) * h1_y[k] * a.size * a.size;
    }
    total
}

/// Largest relative gap between declared partials and central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeReport {
    pub max_relative_error: f64,
    pub worst: String,
    pub points: usize,
}

/// Compare every declared partial with a central difference at `points`
/// random points of `[0, T] × [lo, hi]³`. Errors are scaled by
/// `max(1, |declared|)`.
pub fn check_derivatives<P: ControlProblem + ?Sized>(
    problem: &P,
    horizon: f64,
    range: (f64, f64),
    points: usize,
    seed: u64,
) -> DerivativeReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eps = 1e-6;
    let mut worst = (0.0f64, String::new());
    let mut record = |name: &str, declared: f64, fd: f64| {
        let err = (declared - fd).abs() / declared.abs().max(1.0);
        if err > worst.0 || !err.is_finite() {
            worst = (err, name.to_string());
        }
    };
    for _ in 0..points {
        let t = rng.random_range(0.0..horizon);
        let x = rng.random_range(range.0..range.1);
        let y = rng.random_range(range.0..range.1);
        let z = rng.random_range(range.0..range.1);
        let xi = rng.random_range(0.0..range.1.abs().max(1.0));
        let cd = |f: &dyn Fn(f64) -> f64, v: f64| (f(v + eps) - f(v - eps)) / (2.0 * eps);
        record("b_x", problem.b_x(t, x), cd(&|v| problem.b(t, v), x));
        record(
            "sigma_x",
            problem.sigma_x(t, x),
            cd(&|v| problem.sigma(t, v), x),
        );
        record(
            "theta_x",
            problem.theta_x(t, x),
            cd(&|v| problem.theta(t, v), x),
        );
        record(
            "g1_x",
            problem.g1_x(t, x, y, z, xi),
            cd(&|v| problem.g1(t, v, y, z, xi), x),
        );
        record(
            "g1_y",
            problem.g1_y(t, x, y, z, xi),
            cd(&|v| problem.g1(t, x, v, z, xi), y),
        );
        record(
            "g1_z",
            problem.g1_z(t, x, y, z, xi),
            cd(&|v| problem.g1(t, x, y, v, xi), z),
        );
        record(
            "g1_xi",
            problem.g1_xi(t, x, y, z, xi),
            cd(&|v| problem.g1(t, x, y, z, v), xi),
        );
        record(
            "g2_y",
            problem.g2_y(t, y, xi),
            cd(&|v| problem.g2(t, v, xi), y),
        );
        record(
            "g2_xi",
            problem.g2_xi(t, y, xi),
            cd(&|v| problem.g2(t, y, v), xi),
        );
        record("f_x", problem.f_x(t, x), cd(&|v| problem.f(t, v), x));
        record("phi_x", problem.phi_x(x), cd(&|v| problem.phi(v), x));
        record("psi_y", problem.psi_y(y), cd(&|v| problem.psi(v), y));
        record("h_x", problem.h_x(x), cd(&|v| problem.h(v), x));
    }
    DerivativeReport {
        max_relative_error: worst.0,
        worst: worst.1,
        points,
    }
}

/// Named directions of the standard variation battery.
pub fn variation_battery(
    grid: &TimeGrid,
    candidate: &SingularControl,
) -> Vec<(String, SingularControl)> {
    let horizon = grid.horizon();
    let scaled = if candidate.terminal() > 0.0 {
        candidate.scaled(1.0 / candidate.terminal())
    } else {
        SingularControl::from_fn(grid, |t| t / horizon)
    };
    let mut out = vec![
        ("plus_candidate".to_string(), scaled.clone()),
        ("minus_candidate".to_string(), scaled.scaled(-1.0)),
    ];
    for (name, start) in [
        ("ramp_0", 0.0),
        ("ramp_q1", 0.25),
        ("ramp_mid", 0.5),
        ("ramp_q3", 0.75),
    ] {
        let s = start * horizon;
        out.push((
            name.to_string(),
            SingularControl::from_fn(grid, |t| (t - s).max(0.0) / horizon),
        ));
    }
    for (name, centre) in [("bump_third", 1.0 / 3.0), ("bump_two_thirds", 2.0 / 3.0)] {
        let c = centre * horizon;
        let w = horizon / 6.0;
        out.push((
            name.to_string(),
            SingularControl::from_fn(grid, |t| {
                if (t - c).abs() < w {
                    let u = std::f64::consts::PI * (t - c + w) / (2.0 * w);
                    u.sin().powi(2)
                } else {
                    0.0
                }
            }),
        ));
    }
    out
}
