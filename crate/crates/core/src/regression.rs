//! Cross-sectional least-squares projection used for every conditional
//! expectation in the solvers.
//!
//! State variables are standardized per node. A variable whose spread is
//! negligible (a deterministic control value, or any variable at `t = 0`) is
//! dropped, so the projection reduces to the sample mean there. The intercept
//! is never penalized, which keeps the mean of the fitted values equal to the
//! mean of the targets.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegressionBasis {
    /// Maximal total degree of the monomials in the standardized state.
    pub degree: usize,
    /// Ridge penalty on every coefficient except the intercept.
    pub ridge: f64,
}

impl Default for RegressionBasis {
    fn default() -> Self {
        Self {
            degree: 3,
            ridge: 1e-8,
        }
    }
}

impl RegressionBasis {
    pub fn new(degree: usize, ridge: f64) -> Result<Self> {
        if !(ridge.is_finite() && ridge >= 0.0) {
            return Err(Error::config(format!(
                "ridge must be nonnegative, got {ridge}"
            )));
        }
        Ok(Self { degree, ridge })
    }
}

/// Exponent tuples of all monomials in `vars` variables with total degree
/// at most `degree`, constant first.
fn monomials(vars: usize, degree: usize) -> Vec<Vec<u32>> {
    let mut out = vec![vec![0u32; vars]];
    let mut frontier = vec![vec![0u32; vars]];
    for _ in 0..degree {
        let mut next = Vec::new();
        for m in &frontier {
            // extend only at or after the last nonzero slot to avoid duplicates
            let start = m.iter().rposition(|&e| e > 0).unwrap_or(0);
            for k in start..vars {
                let mut e = m.clone();
                e[k] += 1;
                next.push(e);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

/// Fitted least-squares projector for one node.
#[derive(Debug, Clone)]
pub struct NodeProjector {
    active: Vec<usize>,
    means: Vec<f64>,
    scales: Vec<f64>,
    exponents: Vec<Vec<u32>>,
    cholesky: Cholesky<f64, Dyn>,
    paths: usize,
    condition: f64,
}

impl NodeProjector {
    /// Fit the Gram matrix of the basis on the given state columns.
    pub fn fit(columns: &[&[f64]], basis: &RegressionBasis) -> Result<Self> {
        let paths = columns.first().map_or(0, |c| c.len());
        if paths == 0 {
            return Err(Error::precondition("regression needs at least one path"));
        }
        if columns.iter().any(|c| c.len() != paths) {
            return Err(Error::precondition("state columns have different lengths"));
        }
        let mut active = Vec::new();
        let mut means = Vec::new();
        let mut scales = Vec::new();
        for (k, col) in columns.iter().enumerate() {
            let m = col.iter().sum::<f64>() / paths as f64;
            let sd = (col.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / paths as f64).sqrt();
            if !m.is_finite() || !sd.is_finite() {
                return Err(Error::precondition(format!(
                    "state column {k} is not finite"
                )));
            }
            if sd > 1e-12 * m.abs().max(1.0) {
                active.push(k);
                means.push(m);
                scales.push(sd);
            }
        }
        let degree = if active.is_empty() { 0 } else { basis.degree };
        let exponents = monomials(active.len(), degree);
        let features = exponents.len();
        if paths <= features {
            return Err(Error::TooFewPaths { paths, features });
        }

        let mut gram = DMatrix::<f64>::zeros(features, features);
        let mut row = vec![0.0; features];
        let mut z = vec![0.0; active.len()];
        for p in 0..paths {
            for (j, &k) in active.iter().enumerate() {
                z[j] = (columns[k][p] - means[j]) / scales[j];
            }
            eval_row(&exponents, &z, &mut row);
            for a in 0..features {
                let ra = row[a];
                for b in a..features {
                    gram[(a, b)] += ra * row[b];
                }
            }
        }
        let inv_n = 1.0 / paths as f64;
        for a in 0..features {
            for b in a..features {
                let v = gram[(a, b)] * inv_n;
                gram[(a, b)] = v;
                gram[(b, a)] = v;
            }
        }
        for a in 1..features {
            gram[(a, a)] += basis.ridge;
        }

        let eig = SymmetricEigen::new(gram.clone()).eigenvalues;
        let max = eig.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
        let min = eig.iter().fold(f64::INFINITY, |m, &v| m.min(v));
        let condition = if min > 0.0 { max / min } else { f64::INFINITY };
        if basis.ridge == 0.0 && min <= 1e-12 * max {
            return Err(Error::RankDeficient { condition });
        }
        let cholesky = Cholesky::new(gram).ok_or(Error::RankDeficient { condition })?;
        Ok(Self {
            active,
            means,
            scales,
            exponents,
            cholesky,
            paths,
            condition,
        })
    }

    pub fn feature_count(&self) -> usize {
        self.exponents.len()
    }

    /// Condition number of the (regularized) Gram matrix.
    pub fn condition(&self) -> f64 {
        self.condition
    }

    /// Indices of the state columns kept after dropping constant ones.
    pub fn active_columns(&self) -> &[usize] {
        &self.active
    }

    /// Project `target` onto the feature span; returns fitted values per path.
    pub fn project(&self, columns: &[&[f64]], target: &[f64]) -> Vec<f64> {
        assert_eq!(
            target.len(),
            self.paths,
            "target length differs from the fitted path count"
        );
        let features = self.feature_count();
        let mut rhs = DVector::<f64>::zeros(features);
        let mut row = vec![0.0; features];
        let mut z = vec![0.0; self.active.len()];
        for (p, &y) in target.iter().enumerate() {
            self.standardize(columns, p, &mut z);
            eval_row(&self.exponents, &z, &mut row);
            for a in 0..features {
                rhs[a] += row[a] * y;
            }
        }
        rhs /= self.paths as f64;
        let coef = self.cholesky.solve(&rhs);
        (0..self.paths)
            .map(|p| {
                self.standardize(columns, p, &mut z);
                eval_row(&self.exponents, &z, &mut row);
                row.iter().zip(coef.iter()).map(|(a, b)| a * b).sum()
            })
            .collect()
    }

    fn standardize(&self, columns: &[&[f64]], p: usize, z: &mut [f64]) {
        for (j, &k) in self.active.iter().enumerate() {
            z[j] = (columns[k][p] - self.means[j]) / self.scales[j];
        }
    }
}

fn eval_row(exponents: &[Vec<u32>], z: &[f64], row: &mut [f64]) {
    for (r, e) in row.iter_mut().zip(exponents) {
        let mut v = 1.0;
        for (x, &k) in z.iter().zip(e) {
            if k > 0 {
                v *= x.powi(k as i32);
            }
        }
        *r = v;
    }
}

/// Fitted `E[target | state]` per path, from a single projection.
pub fn estimate_conditional_expectation(
    target: &[f64],
    state: &[&[f64]],
    basis: &RegressionBasis,
) -> Result<Vec<f64>> {
    let proj = NodeProjector::fit(state, basis)?;
    if target.len() != proj.paths {
        return Err(Error::precondition(
            "target and state have different path counts",
        ));
    }
    Ok(proj.project(state, target))
}
