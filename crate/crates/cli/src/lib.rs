//! Scenario runner for `sru-core`: TOML scenarios in, CSV tables out.

pub mod battery;
pub mod config;
pub mod error;
pub mod lattice;
pub mod output;
pub mod scenario;
pub mod study;
pub mod table;

pub use battery::{battery_command, read_candidate, run_battery, BatteryRow, RowStatus};
pub use config::{config_hash, ControlConfig, DriverConfig, ScenarioConfig};
pub use error::{CliError, Result};
pub use lattice::{lattice_search, DeterministicConsumption, Increments, LatticeBest};
pub use output::{resolve_output_dir, write_outputs, RunMeta, OUTPUT_ROOT_VAR};
pub use scenario::{run_scenario, Outcome, RunOutput};
pub use study::{convergence_study, Axis, StudyOptions};
pub use table::{Stat, Table};
