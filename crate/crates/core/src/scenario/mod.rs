//! Scenario files, the simulated world built from them and batch runs.

mod command;
mod config;
mod run;
mod sim;

use std::path::PathBuf;

use thiserror::Error;

pub use command::{parse_command_log, Command, CommandLimits, CommandOutcome, LoggedCommand, TimedCommand};
pub use config::{
    load_scenario, ArmConfig, ArmSource, CameraConfig, ControllerConfig, GreedyConfig, LoadedScenario, MagnetConfig,
    OutputConfig, PeristalsisConfig, RigConfig, ScenarioConfig, FIXTURE_PREFIX,
};
pub use run::{replay, run_episode, run_simulation, write_outputs, RunRecord, StopReason};
pub use sim::{MagnetState, RunLogs, SimStatus, Simulation, StateFrame, COVERAGE_HEADER};

use crate::arm::ArmError;
use crate::dynamics::DynamicsError;
use crate::geometry::io::MeshIoError;
use crate::geometry::OrganError;
use crate::sensing::SensingError;
use crate::tissue::TissueError;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Tissue(#[from] TissueError),
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("parse error at line {line}, column {column}: {msg}")]
    Parse { line: usize, column: usize, msg: String },
    #[error("invalid {field}: {reason}")]
    Validation { field: String, reason: String },
    #[error("{field}: file not found: {}", path.display())]
    MissingFile { field: String, path: PathBuf },
    #[error("{}: {message}", path.display())]
    Io { path: PathBuf, message: String },
    #[error("mesh: {0}")]
    Mesh(#[from] MeshIoError),
    #[error("organ: {0}")]
    Organ(#[from] OrganError),
    #[error("arm: {0}")]
    Arm(#[from] ArmError),
    #[error("cameras: {0}")]
    Sensing(#[from] SensingError),
    #[error("centerline: {0}")]
    Tissue(#[from] TissueError),
    #[error("step {step}: {source}")]
    Step { step: u64, source: SimError },
    #[error("command log line {line}: {msg}")]
    CommandLog { line: usize, msg: String },
}

impl ScenarioError {
    /// Errors in the user's input (config, referenced files and their
    /// contents), as opposed to I/O failures and failures while stepping.
    pub fn is_validation(&self) -> bool {
        !matches!(self, ScenarioError::Io { .. } | ScenarioError::Step { .. })
    }
}
