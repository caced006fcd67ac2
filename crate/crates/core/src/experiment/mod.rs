//! Batch experiments, analysis, live serving and replay behind the CLI.

pub mod analyze;
pub mod plan;
pub mod replay;
pub mod run;
pub mod serve;

pub use analyze::{analyze_trials, load_trials, write_analysis, Analysis, AnalysisReport, Panel, PanelRow, SignPattern};
pub use plan::{ExperimentPlan, FrequencySpec, TrialSpec, FREQ_RANGE};
pub use replay::replay_file;
pub use run::{run_plan, simulate_plan, simulate_trial, write_trial, RunSummary};
pub use serve::{live_analysis, serve, Scenario, ServeConfig, ServeHandle, ServeSummary};

use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ExperimentError {
    /// Bad plan, arguments or input data.
    #[error("{0}")]
    Validation(String),
    /// File system, socket or other environment failure.
    #[error("{0}")]
    Environment(String),
    #[error("simulation: {0}")]
    Simulation(String),
}

impl ExperimentError {
    /// Process exit code: 1 for validation, 2 for environment.
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::Validation(_) | ExperimentError::Simulation(_) => 1,
            ExperimentError::Environment(_) => 2,
        }
    }
}

pub(crate) fn io_err(path: &Path, e: std::io::Error) -> ExperimentError {
    ExperimentError::Environment(format!("{}: {e}", path.display()))
}
