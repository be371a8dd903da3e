//! Left-point Riemann–Stieltjes sums against a singular control.
//!
//! The step `(t_i, t_{i+1}]` is weighted by `f(t_i)`, which makes atoms at
//! `t_{i+1}` see the left value of the integrand. A window starting at the
//! origin also picks up the jump `ξ(t_0) - ξ(0⁻)`, weighted by `f(t_0)`.
//! Windows are half-open away from the origin, so adjacent windows add up
//! exactly.

use crate::control::SingularControl;
use crate::error::{Error, Result};
use crate::grid::TimeGrid;

/// `∫_{[a,b]} f dξ` for grid times `a <= b`.
pub fn stieltjes_integral(
    f: &[f64],
    control: &SingularControl,
    grid: &TimeGrid,
    a: f64,
    b: f64,
) -> Result<f64> {
    let start = grid.node_index(a).ok_or_else(|| {
        Error::config(format!("window start {a} outside [0, {}]", grid.horizon()))
    })?;
    let end = grid
        .node_index(b)
        .ok_or_else(|| Error::config(format!("window end {b} outside [0, {}]", grid.horizon())))?;
    if start > end {
        return Err(Error::config(format!("empty window [{a}, {b}]")));
    }
    if f.len() != grid.len() || control.len() != grid.len() {
        return Err(Error::config(
            "integrand and control must be defined on every grid node",
        ));
    }
    Ok(stieltjes_sum(f, control, start, end))
}

/// Node-indexed form of [`stieltjes_integral`] over `[t_start, t_end]`.
///
/// Evaluated through summation by parts, so a constant integrand returns
/// `c * (ξ(t_end) - ξ(t_start))` without telescoping round-off.
pub fn stieltjes_sum(f: &[f64], control: &SingularControl, start: usize, end: usize) -> f64 {
    let xi = control.values();
    if start == end {
        return if start == 0 { f[0] * xi[0] } else { 0.0 };
    }
    let mut acc = f[end - 1] * xi[end];
    if start > 0 {
        acc -= f[start] * xi[start];
    }
    for i in start + 1..end {
        acc -= xi[i] * (f[i] - f[i - 1]);
    }
    acc
}

/// Running integral `I(t_i) = ∫_{[0, t_i]} f dξ` on every node.
pub fn running_integral(f: &[f64], control: &SingularControl) -> Vec<f64> {
    let mut out = Vec::with_capacity(control.len());
    let mut acc = f[0] * control.value(0);
    out.push(acc);
    for i in 0..control.len() - 1 {
        acc += f[i] * control.increment(i);
        out.push(acc);
    }
    out
}
