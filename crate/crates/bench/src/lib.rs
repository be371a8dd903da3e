//! Fixtures shared by the solver benchmarks.

use std::sync::Arc;

use sru_core::{
    make_time_grid, sample_noise, simulate_geometric_consumption, GeometricModel, LinearDriverSpec,
    PathBundle, SingularControl, TimeGrid,
};

/// Geometric forward paths under `ξ(t) = 0.5 t` on `[0, 1]`.
pub fn geometric_paths(steps: usize, paths: usize, seed: u64) -> (TimeGrid, PathBundle) {
    let grid = make_time_grid(1.0, steps).expect("valid grid");
    let noise = Arc::new(sample_noise(&grid, paths, None, seed).expect("valid noise"));
    let xi = SingularControl::from_fn(&grid, |t| 0.5 * t);
    let model = GeometricModel::constant(&grid, 1.0, 0.05, 0.2);
    let fwd = simulate_geometric_consumption(&model, &xi, &grid, noise).expect("forward paths");
    (grid, fwd)
}

/// `g = 1 + 0.5 Y + 0.2 ξ` with terminal value `X(T)`.
pub fn linear_driver(grid: &TimeGrid, fwd: &PathBundle) -> LinearDriverSpec {
    LinearDriverSpec::constant(grid, 1.0, 0.5, 0.2, fwd.terminal_values())
}
