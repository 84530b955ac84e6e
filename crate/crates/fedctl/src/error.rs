use std::path::Path;

use fedod::detmetrics::MetricsError;
use fedod::fedcore::FedError;
use fedod::params::ParamsError;
use fedod::synthdata::DataError;
use fedod::tinydet::DetError;
use thiserror::Error;

/// Every failure a command can report. Each variant maps to a fixed process
/// exit code, see [`CliError::exit_code`].
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("dataset: {0}")]
    Dataset(String),
    #[error("federation: {0}")]
    Federation(FedError),
    #[error("checkpoint schema: {0}")]
    Schema(String),
    #[error("report input missing: {0}")]
    ReportInput(String),
    #[error("experiment incomplete: {0}")]
    Incomplete(String),
    #[error("{0}")]
    Other(String),
}

pub type Result<T> = std::result::Result<T, CliError>;

/// Documented exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const OTHER: i32 = 1;
    pub const CONFIG: i32 = 2;
    pub const DATASET: i32 = 3;
    pub const FEDERATION: i32 = 4;
    pub const SCHEMA: i32 = 5;
    pub const REPORT_INPUT: i32 = 6;
    pub const INCOMPLETE: i32 = 7;
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => exit::CONFIG,
            CliError::Dataset(_) => exit::DATASET,
            CliError::Federation(_) => exit::FEDERATION,
            CliError::Schema(_) => exit::SCHEMA,
            CliError::ReportInput(_) => exit::REPORT_INPUT,
            CliError::Incomplete(_) => exit::INCOMPLETE,
            CliError::Other(_) => exit::OTHER,
        }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Other(format!("{}: {e}", path.display()))
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::SpecInvalid(m) => CliError::Config(m),
            other => CliError::Dataset(other.to_string()),
        }
    }
}

impl From<FedError> for CliError {
    fn from(e: FedError) -> Self {
        match e {
            FedError::ConfigInvalid(m) => CliError::Config(m),
            FedError::Detector(DetError::ConfigInvalid(m)) => CliError::Config(m),
            FedError::EmptyDataset { .. } => CliError::Dataset(e.to_string()),
            other => CliError::Federation(other),
        }
    }
}

impl From<DetError> for CliError {
    fn from(e: DetError) -> Self {
        match e {
            DetError::ConfigInvalid(m) => CliError::Config(m),
            DetError::EmptyDataset => CliError::Dataset(e.to_string()),
            DetError::Params(p) => CliError::Schema(p.to_string()),
            other => CliError::Other(other.to_string()),
        }
    }
}

impl From<ParamsError> for CliError {
    fn from(e: ParamsError) -> Self {
        match e {
            ParamsError::Io { .. } => CliError::Other(e.to_string()),
            other => CliError::Schema(other.to_string()),
        }
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        CliError::Other(e.to_string())
    }
}
