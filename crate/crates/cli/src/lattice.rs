//! Exhaustive search over monotone lattice controls for the noiseless
//! consumption problem `dX = X(b0 dt - dξ)`, `dY = -αY dξ`, `Y(T) = h(X(T))`.

use sru_core::Utility;

/// How a lattice control moves between nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Increments {
    /// Linear interpolation between nodes.
    Continuous,
    /// A jump of the node increment at the right end of each step.
    Atoms,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeterministicConsumption {
    pub x0: f64,
    pub b0: f64,
    pub alpha: f64,
    pub h: Utility,
    pub horizon: f64,
}

impl DeterministicConsumption {
    /// Exact `Y(0)` for the node values `values`, which start at zero.
    ///
    /// Continuous increments give `e^{αξ(T)} h(x0 e^{b0 T - ξ(T)})`. An atom
    /// `d` multiplies `X` by `1 - d` and `Y(t⁻)` solves
    /// `Y(t⁻) = Y(t) + αY(t⁻)d`. Returns `None` for an atom of size one or
    /// more, or with `αd ≥ 1`.
    pub fn utility(&self, values: &[f64], mode: Increments) -> Option<f64> {
        let total = values.last().copied().unwrap_or(0.0) - values.first().copied().unwrap_or(0.0);
        let grow = (self.b0 * self.horizon).exp();
        match mode {
            Increments::Continuous => {
                Some((self.alpha * total).exp() * self.h.value(self.x0 * grow * (-total).exp()))
            }
            Increments::Atoms => {
                let mut x = self.x0 * grow;
                let mut scale = 1.0;
                for w in values.windows(2) {
                    let d = w[1] - w[0];
                    if d >= 1.0 || self.alpha * d >= 1.0 {
                        return None;
                    }
                    x *= 1.0 - d;
                    scale /= 1.0 - self.alpha * d;
                }
                Some(scale * self.h.value(x))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatticeBest {
    /// Node values, starting with `ξ(0) = 0`.
    pub control: Vec<f64>,
    pub value: f64,
    pub evaluated: usize,
}

/// Maximize `value` over nondecreasing `ξ(t_1), ..., ξ(t_steps)` drawn
/// from `levels`, with `ξ(0) = 0`. Ties keep the first control in
/// lexicographic order.
pub fn lattice_search(
    levels: &[f64],
    steps: usize,
    value: impl Fn(&[f64]) -> Option<f64>,
) -> Option<LatticeBest> {
    let mut sorted = levels.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let mut best: Option<LatticeBest> = None;
    let mut evaluated = 0;
    let mut idx = vec![0usize; steps];
    loop {
        let mut control = Vec::with_capacity(steps + 1);
        control.push(0.0);
        control.extend(idx.iter().map(|&k| sorted[k]));
        if let Some(v) = value(&control) {
            evaluated += 1;
            if best.as_ref().is_none_or(|b| v > b.value) {
                best = Some(LatticeBest {
                    control,
                    value: v,
                    evaluated: 0,
                });
            }
        }
        // next nondecreasing index tuple
        let Some(pos) = (0..steps).rev().find(|&k| idx[k] + 1 < sorted.len()) else {
            break;
        };
        let next = idx[pos] + 1;
        for k in idx.iter_mut().skip(pos) {
            *k = next;
        }
    }
    best.map(|b| LatticeBest { evaluated, ..b })
}
