//! Scenario files: TOML with one table per concern, unknown keys rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use sru_core::{
    FixedPointOptions, ForwardModel, GateauxOptions, PicardOptions, RegressionBasis, RunningDriver,
    SingularRate, StandardProblem, Utility,
};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub seed: u64,
    /// Signed so that a negative count is reported against the field
    /// rather than as a type error.
    pub paths: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    pub grid: GridConfig,
    pub model: ForwardModel,
    pub driver: DriverConfig,
    #[serde(default)]
    pub control: ControlConfig,
    #[serde(default)]
    pub regression: RegressionBasis,
    #[serde(default)]
    pub picard: PicardOptions,
    #[serde(default)]
    pub reflection: FixedPointOptions,
    #[serde(default)]
    pub gateaux: GateauxOptions,
    #[serde(default)]
    pub checks: ChecksConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub horizon: f64,
    pub steps: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DriverConfig {
    /// `g = φ + αY + cξ` with terminal value `terminal(X(T))`.
    Linear {
        #[serde(default)]
        phi: f64,
        #[serde(default)]
        alpha: f64,
        #[serde(default)]
        c: f64,
        #[serde(default = "unit_slope")]
        terminal: Utility,
    },
    /// Recursive utility of a control problem.
    Utility {
        #[serde(default)]
        g1: RunningDriver,
        #[serde(default)]
        g2: SingularRate,
        h: Utility,
        #[serde(default = "zero_utility")]
        phi: Utility,
        #[serde(default = "unit_slope")]
        psi: Utility,
        #[serde(default)]
        running: f64,
    },
}

fn unit_slope() -> Utility {
    Utility::linear(1.0)
}

fn zero_utility() -> Utility {
    Utility::Zero
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ControlConfig {
    #[default]
    Zero,
    /// `ξ(t) = rate · t`.
    Linear { rate: f64 },
    /// Solve for the control by the reflection fixed point.
    FixedPoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChecksConfig {
    /// Run the variation battery at the final control.
    pub battery: bool,
    /// Standard errors a battery row may sit above zero.
    pub battery_z: f64,
}

impl Default for ChecksConfig {
    fn default() -> Self {
        Self {
            battery: false,
            battery_z: 3.0,
        }
    }
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig =
            toml::from_str(text).map_err(|e| CliError::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<(Self, String)> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let cfg = Self::from_toml(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        Ok((cfg, text))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario configs always serialize")
    }

    pub fn path_count(&self) -> usize {
        self.paths as usize
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |field: &str, msg: String| Err(CliError::config(format!("{field}: {msg}")));
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return fail(
                "name",
                format!("must be a nonempty plain file name, got {:?}", self.name),
            );
        }
        if self.paths < 2 {
            return fail("paths", format!("must be at least 2, got {}", self.paths));
        }
        if !(self.grid.horizon.is_finite() && self.grid.horizon > 0.0) {
            return fail(
                "grid.horizon",
                format!("must be positive, got {}", self.grid.horizon),
            );
        }
        if self.grid.steps == 0 {
            return fail("grid.steps", "must be positive".into());
        }
        match self.model {
            ForwardModel::Geometric { x0, b0, sigma0 } => {
                if !(x0.is_finite() && x0 > 0.0) {
                    return fail(
                        "model.x0",
                        format!("must be positive for the geometric model, got {x0}"),
                    );
                }
                if !(b0.is_finite() && sigma0.is_finite()) {
                    return fail("model", "coefficients must be finite".into());
                }
            }
            ForwardModel::Affine {
                x0,
                b0,
                b1,
                s0,
                s1,
                theta0,
                theta1,
            } => {
                if ![x0, b0, b1, s0, s1, theta0, theta1]
                    .iter()
                    .all(|v| v.is_finite())
                {
                    return fail("model", "coefficients must be finite".into());
                }
            }
        }
        match self.control {
            ControlConfig::Linear { rate } if !(rate.is_finite() && rate >= 0.0) => {
                return fail("control.rate", format!("must be nonnegative, got {rate}"));
            }
            ControlConfig::FixedPoint if matches!(self.driver, DriverConfig::Linear { .. }) => {
                return fail("control.kind", "fixed_point needs a utility driver".into());
            }
            _ => {}
        }
        if !(self.regression.ridge.is_finite() && self.regression.ridge >= 0.0) {
            return fail(
                "regression.ridge",
                format!("must be nonnegative, got {}", self.regression.ridge),
            );
        }
        if self.picard.max_iter == 0 {
            return fail("picard.max_iter", "must be positive".into());
        }
        let r = &self.reflection;
        if !(r.damping > 0.0 && r.damping <= 1.0) {
            return fail(
                "reflection.damping",
                format!("must lie in (0, 1], got {}", r.damping),
            );
        }
        if r.max_sweeps == 0 || !(r.tol > 0.0) || !(r.stiffness > 0.0) || !(r.noise_band >= 0.0) {
            return fail(
                "reflection",
                "max_sweeps, tol and stiffness must be positive, noise_band nonnegative".into(),
            );
        }
        let steps = &self.gateaux.steps;
        if steps.is_empty() || steps.iter().any(|a| !(a.is_finite() && *a > 0.0)) {
            return fail(
                "gateaux.steps",
                format!("must be a nonempty list of positive steps, got {steps:?}"),
            );
        }
        if steps.windows(2).any(|w| w[1] >= w[0]) {
            return fail("gateaux.steps", "must be strictly decreasing".into());
        }
        if !(self.checks.battery_z >= 0.0) {
            return fail(
                "checks.battery_z",
                format!("must be nonnegative, got {}", self.checks.battery_z),
            );
        }
        Ok(())
    }

    /// Control problem for the forward model and the utility driver; the
    /// linear driver only uses its forward part.
    pub fn problem(&self) -> StandardProblem {
        let base = StandardProblem {
            forward: self.model,
            g1: RunningDriver::default(),
            g2: SingularRate::default(),
            h: Utility::Zero,
            phi: Utility::Zero,
            psi: Utility::linear(1.0),
            running: 0.0,
        };
        match self.driver {
            DriverConfig::Linear { .. } => base,
            DriverConfig::Utility {
                g1,
                g2,
                h,
                phi,
                psi,
                running,
            } => StandardProblem {
                g1,
                g2,
                h,
                phi,
                psi,
                running,
                ..base
            },
        }
    }
}

/// Lowercase hex SHA-256.
pub fn config_hash(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
