//! Singular controls on a [`TimeGrid`](crate::grid::TimeGrid).
//!
//! A control is stored by its node values `ξ(t_i)` together with an explicit
//! list of atoms. The increment `ξ(t_{i+1}) - ξ(t_i)` covers the half-open
//! step `(t_i, t_{i+1}]`; an atom declared at node `k` is part of the
//! increment that ends at `t_k`. The left limit at the origin is zero, so a
//! positive `ξ(t_0)` must be declared as an atom at node 0.
//!
//! Construction does not enforce monotonicity: admissibility is checked by
//! [`SingularControl::validate`], which returns every violation it finds.
//! Variations `β` used in directional derivatives share the same type and may
//! legitimately decrease.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::grid::TimeGrid;

/// A jump `Δξ` of the control located at a grid node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub node: usize,
    pub size: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SingularControl {
    values: Vec<f64>,
    atoms: Vec<Atom>,
}

/// Slack used when comparing atom sizes to node increments.
const ATOM_TOL: f64 = 1e-12;

impl SingularControl {
    /// A control without atoms. `values[0]` should be zero for the result to
    /// be admissible.
    pub fn continuous(values: Vec<f64>) -> Self {
        Self {
            values,
            atoms: Vec::new(),
        }
    }

    pub fn zero(grid: &TimeGrid) -> Self {
        Self::continuous(vec![0.0; grid.len()])
    }

    pub fn from_fn<F: Fn(f64) -> f64>(grid: &TimeGrid, f: F) -> Self {
        Self::continuous(grid.map(f))
    }

    /// Node values plus declared atoms, taken as given.
    pub fn with_atoms(values: Vec<f64>, mut atoms: Vec<Atom>) -> Self {
        atoms.sort_by_key(|a| a.node);
        Self { values, atoms }
    }

    /// Add a jump of `size` at `node`, shifting every later node value.
    pub fn add_atom(&mut self, node: usize, size: f64) {
        for v in self.values.iter_mut().skip(node) {
            *v += size;
        }
        match self.atoms.iter_mut().find(|a| a.node == node) {
            Some(a) => a.size += size,
            None => {
                self.atoms.push(Atom { node, size });
                self.atoms.sort_by_key(|a| a.node);
            }
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, i: usize) -> f64 {
        self.values[i]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn is_continuous(&self) -> bool {
        self.atoms.iter().all(|a| a.size == 0.0)
    }

    pub fn terminal(&self) -> f64 {
        self.values.last().copied().unwrap_or(0.0)
    }

    /// Jump size declared at `node`, zero when none.
    pub fn atom_at(&self, node: usize) -> f64 {
        self.atoms
            .iter()
            .filter(|a| a.node == node)
            .map(|a| a.size)
            .sum()
    }

    /// Total increment over the step `(t_i, t_{i+1}]`, atom at `t_{i+1}` included.
    pub fn increment(&self, i: usize) -> f64 {
        self.values[i + 1] - self.values[i]
    }

    /// Increment over `(t_i, t_{i+1})` without the atom at `t_{i+1}`.
    pub fn continuous_increment(&self, i: usize) -> f64 {
        self.increment(i) - self.atom_at(i + 1)
    }

    /// Pointwise `self + a * other`; atoms are merged.
    pub fn perturbed(&self, a: f64, other: &SingularControl) -> SingularControl {
        assert_eq!(self.len(), other.len(), "controls live on different grids");
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(x, y)| x + a * y)
            .collect();
        let mut atoms = self.atoms.clone();
        for b in &other.atoms {
            match atoms.iter_mut().find(|x| x.node == b.node) {
                Some(x) => x.size += a * b.size,
                None => atoms.push(Atom {
                    node: b.node,
                    size: a * b.size,
                }),
            }
        }
        atoms.retain(|x| x.size != 0.0);
        Self::with_atoms(values, atoms)
    }

    /// Pointwise convex combination `(1 - w) * self + w * other`.
    pub fn blend(&self, w: f64, other: &SingularControl) -> SingularControl {
        self.scaled(1.0 - w).perturbed(w, other)
    }

    pub fn scaled(&self, c: f64) -> SingularControl {
        let values = self.values.iter().map(|v| c * v).collect();
        let atoms = self
            .atoms
            .iter()
            .map(|a| Atom {
                node: a.node,
                size: c * a.size,
            })
            .filter(|a| a.size != 0.0)
            .collect();
        Self::with_atoms(values, atoms)
    }

    /// Largest absolute node difference.
    pub fn sup_distance(&self, other: &SingularControl) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn validate(&self) -> Result<(), ControlViolations> {
        validate_control(self)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    NonFinite {
        node: usize,
    },
    Negative {
        node: usize,
        value: f64,
    },
    Decreasing {
        node: usize,
        previous: f64,
        value: f64,
    },
    AtomOutOfRange {
        node: usize,
    },
    NegativeAtom {
        node: usize,
        size: f64,
    },
    AtomExceedsIncrement {
        node: usize,
        atom: f64,
        increment: f64,
    },
    UndeclaredInitialJump {
        value: f64,
        atom: f64,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NonFinite { node } => write!(f, "non-finite value at node {node}"),
            Violation::Negative { node, value } => {
                write!(f, "negative value {value} at node {node}")
            }
            Violation::Decreasing {
                node,
                previous,
                value,
            } => {
                write!(f, "decrease at node {node}: {previous} -> {value}")
            }
            Violation::AtomOutOfRange { node } => write!(f, "atom at node {node} is off the grid"),
            Violation::NegativeAtom { node, size } => {
                write!(f, "negative atom {size} at node {node}")
            }
            Violation::AtomExceedsIncrement {
                node,
                atom,
                increment,
            } => {
                write!(
                    f,
                    "atom {atom} at node {node} exceeds node increment {increment}"
                )
            }
            Violation::UndeclaredInitialJump { value, atom } => {
                write!(
                    f,
                    "initial value {value} does not match atom at origin {atom}"
                )
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlViolations(pub Vec<Violation>);

impl ControlViolations {
    /// Node of the first monotonicity break, if any.
    pub fn first_decrease(&self) -> Option<usize> {
        self.0.iter().find_map(|v| match v {
            Violation::Decreasing { node, .. } => Some(*node),
            _ => None,
        })
    }
}

impl fmt::Display for ControlViolations {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|v| v.to_string()).collect();
        write!(f, "{}", parts.join("; "))
    }
}

impl std::error::Error for ControlViolations {}

/// Check admissibility: finite, nonnegative, nondecreasing, with atoms
/// consistent with the node values.
pub fn validate_control(control: &SingularControl) -> Result<(), ControlViolations> {
    let mut found = Vec::new();
    let values = control.values();
    for (i, &v) in values.iter().enumerate() {
        if !v.is_finite() {
            found.push(Violation::NonFinite { node: i });
        } else if v < 0.0 {
            found.push(Violation::Negative { node: i, value: v });
        }
    }
    for i in 1..values.len() {
        if values[i] < values[i - 1] {
            found.push(Violation::Decreasing {
                node: i,
                previous: values[i - 1],
                value: values[i],
            });
        }
    }
    for a in control.atoms() {
        if a.node >= values.len() {
            found.push(Violation::AtomOutOfRange { node: a.node });
            continue;
        }
        if a.size < 0.0 {
            found.push(Violation::NegativeAtom {
                node: a.node,
                size: a.size,
            });
        }
        if a.node > 0 {
            let inc = values[a.node] - values[a.node - 1];
            if a.size > inc + ATOM_TOL * (1.0 + inc.abs()) {
                found.push(Violation::AtomExceedsIncrement {
                    node: a.node,
                    atom: a.size,
                    increment: inc,
                });
            }
        }
    }
    if let Some(&v0) = values.first() {
        let a0 = control.atom_at(0);
        if (v0 - a0).abs() > ATOM_TOL * (1.0 + v0.abs()) {
            found.push(Violation::UndeclaredInitialJump {
                value: v0,
                atom: a0,
            });
        }
    }
    if found.is_empty() {
        Ok(())
    } else {
        Err(ControlViolations(found))
    }
}
