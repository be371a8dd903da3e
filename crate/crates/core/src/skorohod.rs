//! One-dimensional Skorohod reflection at zero and a damped fixed-point
//! sweep that drives a deterministic control towards the complementarity
//! system `H₂ ≤ 0`, `H₂ dξ = 0`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::bsde::PicardOptions;
use crate::control::{Atom, SingularControl};
use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::linear::mean_and_se;
use crate::maxprinciple::{
    solve_system, vi_report_from_barrier, ControlProblem, SystemState, ViReport,
};
use crate::noise::NoiseBundle;
use crate::regression::RegressionBasis;
use crate::stieltjes::stieltjes_sum;

#[derive(Debug, Clone, PartialEq)]
pub struct ReflectionOutput {
    /// `free + ξ`, nonnegative on every node.
    pub reflected: Vec<f64>,
    /// The regulator `ξ`; an atom at the origin when `free(t_0) < 0`.
    pub local_time: SingularControl,
    /// Largest negative part of the reflected path (zero up to round-off).
    pub max_violation: f64,
    /// `Σ reflected(t_{i+1}) Δξ_i`, zero when `ξ` only grows at the barrier.
    pub barrier_integral: f64,
}

/// `ξ(t_i) = max(0, max_{j≤i} -free(t_j))` and `reflected = free + ξ`.
pub fn skorohod_map(free: &[f64]) -> ReflectionOutput {
    let mut values = Vec::with_capacity(free.len());
    let mut m = 0.0f64;
    for &f in free {
        let v = -f;
        if v > m {
            m = v;
        }
        values.push(m);
    }
    let reflected: Vec<f64> = free.iter().zip(&values).map(|(f, x)| f + x).collect();
    let atoms = match values.first() {
        Some(&v0) if v0 > 0.0 => vec![Atom { node: 0, size: v0 }],
        _ => Vec::new(),
    };
    let max_violation = reflected.iter().fold(0.0f64, |a, r| a.max(-r));
    let barrier_integral = (0..values.len().saturating_sub(1))
        .map(|i| reflected[i + 1] * (values[i + 1] - values[i]))
        .sum();
    ReflectionOutput {
        reflected,
        local_time: SingularControl::with_atoms(values, atoms),
        max_violation,
        barrier_integral,
    }
}

/// `(sup S⁺, ∫ 1{S < -ε} dξ)` for a node series `S`.
pub fn complementarity_report(
    barrier: &[f64],
    control: &SingularControl,
    epsilon: f64,
) -> (f64, f64) {
    let excess = barrier.iter().fold(0.0f64, |a, &s| a.max(s));
    let indicator: Vec<f64> = barrier
        .iter()
        .map(|&s| if s < -epsilon { 1.0 } else { 0.0 })
        .collect();
    let mass = stieltjes_sum(&indicator, control, 0, control.len() - 1);
    (excess, mass)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FixedPointOptions {
    /// Weight `ρ` of the reflected proposal in each update.
    pub damping: f64,
    pub max_sweeps: usize,
    /// Sup-norm update below which the sweep stops.
    pub tol: f64,
    /// Initial barrier stiffness `κ`, in barrier units per unit of `ξ`.
    pub stiffness: f64,
    /// Tolerance of the variational-inequality verdict.
    pub vi_tol: f64,
    /// Standard errors within which time variation of the mean barrier is
    /// treated as noise; zero uses the raw node means.
    pub noise_band: f64,
    /// Boundary tolerance; `None` selects `1e-3 · max_i mean(|pθ| + |λg₂|)`.
    pub epsilon: Option<f64>,
    pub picard: PicardOptions,
}

impl Default for FixedPointOptions {
    fn default() -> Self {
        Self {
            damping: 0.5,
            max_sweeps: 50,
            tol: 1e-4,
            stiffness: 1.0,
            vi_tol: 5e-2,
            noise_band: 3.0,
            epsilon: None,
            picard: PicardOptions {
                tol: Some(1e-9),
                max_iter: 100,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRecord {
    pub sweep: usize,
    /// Candidate `ξ_k` at which the system was solved.
    pub control: Vec<f64>,
    /// Sample mean of the barrier `pθ + λg₂` per node.
    pub barrier_mean: Vec<f64>,
    pub update_norm: f64,
    pub stiffness: f64,
    pub vi: ViReport,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FixedPointTrace {
    pub sweeps: Vec<SweepRecord>,
}

#[derive(Debug, Clone)]
pub struct FixedPointSolution {
    pub control: SingularControl,
    pub state: SystemState,
    pub vi: ViReport,
    pub trace: FixedPointTrace,
    /// Boundary tolerance used in the final report.
    pub epsilon: f64,
    /// `(sup S̄⁺, ∫ 1{S̄ < -ε} dξ̂)` on the mean barrier.
    pub complementarity: (f64, f64),
}

/// Reflected proposal for one sweep.
///
/// The level `L_j = ξ(t_{j+1}) + w_j S̄(t_j) / κ` with `w_j = t_{j+1} / T`
/// raises consumption where the mean barrier is positive and lowers it where
/// it is negative; the reflection of `-L` is its running maximum, which
/// keeps the proposal nondecreasing and starting from zero.
fn reflected_proposal(
    control: &SingularControl,
    barrier_mean: &[f64],
    grid: &TimeGrid,
    stiffness: f64,
) -> Vec<f64> {
    let steps = grid.steps();
    let free: Vec<f64> = (0..steps)
        .map(|j| {
            let w = grid.time(j + 1) / grid.horizon();
            -(control.value(j + 1) + w * barrier_mean[j] / stiffness)
        })
        .collect();
    let out = skorohod_map(&free);
    let mut raw = Vec::with_capacity(steps + 1);
    raw.push(0.0);
    raw.extend_from_slice(out.local_time.values());
    raw
}

fn node_means(s: &[f64], n: usize) -> Vec<f64> {
    let paths = s.len() / n;
    (0..n)
        .map(|i| (0..paths).map(|p| s[p * n + i]).sum::<f64>() / paths as f64)
        .collect()
}

/// Mean barrier with its time variation shrunk towards the time-averaged
/// level by `max(z·se, ε)`, where `se` is the standard error of the pathwise
/// deviation from that level.
///
/// Variation within sampling error or within the boundary tolerance is not
/// acted upon, so directions along which the objective is flat do not drift.
fn filtered_barrier(s: &[f64], n: usize, z: f64, epsilon: f64) -> Vec<f64> {
    let paths = s.len() / n;
    let steps = n - 1;
    let row_level: Vec<f64> = (0..paths)
        .map(|p| s[p * n..p * n + steps].iter().sum::<f64>() / steps as f64)
        .collect();
    let level = row_level.iter().sum::<f64>() / paths as f64;
    (0..n)
        .map(|i| {
            let d: Vec<f64> = (0..paths).map(|p| s[p * n + i] - row_level[p]).collect();
            let (m, se) = mean_and_se(&d);
            let band = (z * se).max(epsilon);
            level + m.signum() * (m.abs() - band).max(0.0)
        })
        .collect()
}

/// `Σ w_j S_j / Σ w_j` over the steps, with the proposal weights.
fn weighted_level(barrier: &[f64], grid: &TimeGrid) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for j in 0..grid.steps() {
        let w = grid.time(j + 1) / grid.horizon();
        num += w * barrier[j];
        den += w;
    }
    num / den
}

struct Evaluation {
    state: SystemState,
    barrier: Vec<f64>,
    epsilon: f64,
}

fn evaluate<P: ControlProblem + ?Sized>(
    problem: &P,
    control: &SingularControl,
    grid: &TimeGrid,
    noise: Arc<NoiseBundle>,
    basis: &RegressionBasis,
    options: &FixedPointOptions,
) -> Result<Evaluation> {
    let state = solve_system(problem, control, grid, noise, basis, &options.picard)?;
    let barrier = state.barrier(problem);
    let epsilon = options
        .epsilon
        .unwrap_or_else(|| 1e-3 * state.barrier_scale(problem));
    Ok(Evaluation {
        state,
        barrier,
        epsilon,
    })
}

/// Damped fixed-point sweep for a deterministic control satisfying the
/// complementarity system of `problem`.
pub fn solve_reflection_fixed_point<P: ControlProblem + ?Sized>(
    problem: &P,
    grid: &TimeGrid,
    noise: Arc<NoiseBundle>,
    basis: &RegressionBasis,
    options: &FixedPointOptions,
    initial: Option<SingularControl>,
) -> Result<FixedPointSolution> {
    if !(options.damping > 0.0 && options.damping <= 1.0) {
        return Err(Error::config(format!(
            "damping must lie in (0, 1], got {}",
            options.damping
        )));
    }
    if !(options.tol > 0.0)
        || !(options.stiffness > 0.0)
        || options.max_sweeps == 0
        || !(options.noise_band >= 0.0)
    {
        return Err(Error::config(
            "tol, stiffness and max_sweeps must be positive, noise_band nonnegative",
        ));
    }
    let n = grid.len();
    let mut control = initial.unwrap_or_else(|| SingularControl::zero(grid));
    if control.len() != n {
        return Err(Error::config("initial control is not on the grid"));
    }
    let kappa0 = options.stiffness;
    let mut kappa = kappa0;
    let mut trace = FixedPointTrace::default();
    let mut previous: Option<(f64, f64)> = None;

    for sweep in 0..options.max_sweeps {
        let eval = evaluate(problem, &control, grid, noise.clone(), basis, options)?;
        let mean = node_means(&eval.barrier, n);
        let filtered = filtered_barrier(&eval.barrier, n, options.noise_band, eval.epsilon);
        let vi = vi_report_from_barrier(&eval.barrier, n, &control, options.vi_tol);

        // Secant on the total-mass mode, allowed to move by a factor of two per sweep.
        let total = control.value(n - 1);
        let level = weighted_level(&filtered, grid);
        if let Some((prev_total, prev_level)) = previous {
            let d = total - prev_total;
            if d.abs() > 1e-12 {
                let k = -(level - prev_level) / d;
                if k > 0.0 {
                    kappa = k
                        .clamp(kappa / 2.0, 2.0 * kappa)
                        .clamp(kappa0 / 100.0, 100.0 * kappa0);
                }
            }
        }

        let raw = reflected_proposal(&control, &filtered, grid, kappa);
        let values: Vec<f64> = control
            .values()
            .iter()
            .zip(&raw)
            .map(|(a, b)| (1.0 - options.damping) * a + options.damping * b)
            .collect();
        let next = SingularControl::continuous(values);
        let update = next.sup_distance(&control);
        trace.sweeps.push(SweepRecord {
            sweep,
            control: control.values().to_vec(),
            barrier_mean: mean,
            update_norm: update,
            stiffness: kappa,
            vi,
        });
        previous = Some((total, level));
        control = next;

        if update < options.tol {
            let eval = evaluate(problem, &control, grid, noise.clone(), basis, options)?;
            let vi = vi_report_from_barrier(&eval.barrier, n, &control, options.vi_tol);
            let mean = node_means(&eval.barrier, n);
            let complementarity = complementarity_report(&mean, &control, eval.epsilon);
            return Ok(FixedPointSolution {
                control,
                state: eval.state,
                vi,
                trace,
                epsilon: eval.epsilon,
                complementarity,
            });
        }
    }
    let last_update = trace.sweeps.last().map_or(f64::NAN, |r| r.update_norm);
    Err(Error::SweepNonConvergence {
        sweeps: options.max_sweeps,
        last_update,
        trace: Box::new(trace),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nonnegative_free_path_untouched() {
        let free: Vec<f64> = (0..10).map(|i| i as f64 * 0.1).collect();
        let out = skorohod_map(&free);
        assert!(out.local_time.values().iter().all(|&v| v == 0.0));
        assert_eq!(out.reflected, free);
        assert!(out.local_time.validate().is_ok());
    }

    #[test]
    fn sticky_at_barrier() {
        let free: Vec<f64> = (0..10).map(|i| -(i as f64) * 0.1).collect();
        let out = skorohod_map(&free);
        for (i, (&x, &r)) in out
            .local_time
            .values()
            .iter()
            .zip(&out.reflected)
            .enumerate()
        {
            assert_eq!(x, i as f64 * 0.1);
            assert_eq!(r, 0.0);
        }
        assert_eq!(out.barrier_integral, 0.0);
    }

    #[test]
    fn negative_start_is_an_atom() {
        let out = skorohod_map(&[-0.5, 0.0, 1.0]);
        assert_eq!(out.local_time.atom_at(0), 0.5);
        assert!(out.local_time.validate().is_ok());
    }

    #[test]
    fn complementarity_examples() {
        let g = TimeGrid::new(1.0, 4).unwrap();
        let zero = SingularControl::zero(&g);
        assert_eq!(complementarity_report(&[-1.0; 5], &zero, 1e-3), (0.0, 0.0));
        let lin = SingularControl::from_fn(&g, |t| t);
        assert_eq!(complementarity_report(&[0.0; 5], &lin, 1e-3), (0.0, 0.0));

        // S = -1 on [0, 1/2], 0 after; the step leaving t = 1/2 is weighted by S(1/2)
        let g = TimeGrid::new(1.0, 8).unwrap();
        let s = g.map(|t| if t <= 0.5 { -1.0 } else { 0.0 });
        let late = SingularControl::from_fn(&g, |t| (t - 0.625).max(0.0));
        assert_eq!(complementarity_report(&s, &late, 1e-3), (0.0, 0.0));
        let early = SingularControl::from_fn(&g, |t| t.min(0.5));
        assert_eq!(complementarity_report(&s, &early, 1e-3).1, 0.5);
    }
}
