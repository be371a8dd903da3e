//! Singular BSDEs, singular recursive utility and the maximum principle for
//! singular control, on simulated paths.
//!
//! Controls are deterministic nondecreasing paths on a uniform grid; all
//! `dξ` integrals use left-point sums. Conditional expectations are
//! least-squares projections on polynomial features of `(X(t), ξ(t))`.

pub mod bsde;
pub mod control;
pub mod error;
pub mod forward;
pub mod grid;
pub mod linear;
pub mod maxprinciple;
pub mod noise;
pub mod regression;
pub mod skorohod;
pub mod stieltjes;

pub use bsde::{
    contraction_diagnostics, extract_z, picard_iterates, picard_solve, BsdeSolution,
    ContractionReport, ContractionVerdict, DriverArgs, FnDriver, LipschitzConstants, PicardOptions,
    SingularDriver,
};
pub use control::{validate_control, Atom, ControlViolations, SingularControl, Violation};
pub use error::{Error, Result};
pub use forward::{
    simulate_forward, simulate_geometric_consumption, ForwardCoefficients, GeometricModel,
    JumpTerm, PathBundle,
};
pub use grid::{make_time_grid, TimeGrid};
pub use linear::{
    gamma_process, linear_solution, martingale_check, mean_and_se, GammaPath, LinearDriverSpec,
    MartingaleReport,
};
pub use maxprinciple::{
    check_derivatives, check_variational_inequality, evaluate_objective, gateaux_derivative,
    hamiltonian, objective_from, simulate_lambda, solve_adjoint_p, solve_system, solve_utility,
    variation_battery, ControlProblem, ForwardModel, GateauxOptions, GateauxResult, ObjectiveValue,
    RunningDriver, SingularRate, StandardProblem, SystemState, Utility, UtilityDriver, ViReport,
};
pub use noise::{sample_noise, JumpMark, LevySpec, MarkDistribution, NoiseBundle};
pub use regression::{estimate_conditional_expectation, NodeProjector, RegressionBasis};
pub use skorohod::{
    complementarity_report, skorohod_map, solve_reflection_fixed_point, FixedPointOptions,
    FixedPointSolution, FixedPointTrace, ReflectionOutput, SweepRecord,
};
pub use stieltjes::{running_integral, stieltjes_integral, stieltjes_sum};
