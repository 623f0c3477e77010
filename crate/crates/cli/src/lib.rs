//! Experiment runner: configuration, dataset ingestion and partitioning,
//! session orchestration, metrics and the accountant/bench tools.

pub mod bench;
pub mod config;
pub mod data;
pub mod metrics;
pub mod run;

use dpmpc_core::dp::DpError;
use dpmpc_core::mpc::MpcError;
use dpmpc_core::numeric::NumericError;
use dpmpc_core::train::TrainError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error(transparent)]
    Guard(#[from] DpError),
    #[error("protocol error: {0}")]
    Runtime(String),
    #[error("output error: {0}")]
    Output(String),
}

impl CliError {
    /// 2 for configuration, data and guard problems; 3 for failures while
    /// running or writing results.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Data(_) | CliError::Guard(_) => 2,
            CliError::Runtime(_) | CliError::Output(_) => 3,
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Dp(d) => CliError::Guard(d),
            TrainError::Config(s) => CliError::Config(s),
            TrainError::Mpc(m) => CliError::Runtime(m.to_string()),
            TrainError::Numeric(n) => CliError::Runtime(n.to_string()),
        }
    }
}

impl From<MpcError> for CliError {
    fn from(e: MpcError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<NumericError> for CliError {
    fn from(e: NumericError) -> Self {
        CliError::Config(e.to_string())
    }
}
