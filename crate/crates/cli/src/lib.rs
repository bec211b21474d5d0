//! Scenario-driven front end for the `corridor` library: design, analyze,
//! simulate and verify pipelines with JSON reports and CSV plot data.

pub mod commands;
pub mod config;
pub mod output;

use thiserror::Error;

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const FAILURE: i32 = 1;
    pub const SCHEMA: i32 = 2;
    pub const UNREACHABLE_CORRIDOR: i32 = 3;
    pub const NO_STABILIZING_SLOPES: i32 = 4;
    pub const SIMULATION_ABORT: i32 = 5;
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Schema(String),
    #[error(transparent)]
    Core(#[from] corridor::Error),
    #[error("io: {0}")]
    Io(String),
    #[error("{0} verification check(s) failed")]
    VerifyFailed(usize),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use corridor::Error as E;
        match self {
            CliError::Schema(_) => exit::SCHEMA,
            CliError::Core(e) => match e {
                E::CorridorUnreachable { .. } => exit::UNREACHABLE_CORRIDOR,
                E::NoStabilizingSlopes { .. } => exit::NO_STABILIZING_SLOPES,
                E::SimulationAbort { .. } => exit::SIMULATION_ABORT,
                E::Validation(_)
                | E::NotDistinct(..)
                | E::Domain { .. }
                | E::SlopeSign(_)
                | E::SaturatedDesignPoint { .. }
                | E::UnreachableDose { .. } => exit::SCHEMA,
                _ => exit::FAILURE,
            },
            CliError::Io(_) | CliError::VerifyFailed(_) => exit::FAILURE,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
