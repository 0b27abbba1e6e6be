use std::path::Path;

use cfmf::data::DataError;
use cfmf::harness::HarnessError;
use cfmf::models::serialize::DumpError;
use cfmf::models::FitError;
use thiserror::Error;

/// Exit codes. Anything not listed exits with 1.
pub mod code {
    pub const USAGE: i32 = 2;
    pub const IO: i32 = 3;
    pub const DIVERGED: i32 = 4;
    pub const PARTIAL: i32 = 5;
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("I/O error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{0}")]
    Data(DataError),
    #[error("{0}")]
    Diverged(String),
    #[error("{0}")]
    Fit(FitError),
    #[error("{0}")]
    Dump(DumpError),
    #[error("{0}")]
    Harness(HarnessError),
    #[error("{0}")]
    Partial(String),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => code::USAGE,
            CliError::Io { .. } => code::IO,
            CliError::Data(DataError::Io { .. }) => code::IO,
            CliError::Dump(DumpError::Io { .. }) => code::IO,
            CliError::Harness(HarnessError::Io { .. }) => code::IO,
            CliError::Harness(HarnessError::Plan(_)) => code::USAGE,
            CliError::Fit(FitError::InvalidConfig(_)) => code::USAGE,
            CliError::Diverged(_) => code::DIVERGED,
            CliError::Partial(_) => code::PARTIAL,
            _ => 1,
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Data(e)
    }
}

impl From<FitError> for CliError {
    fn from(e: FitError) -> Self {
        match e {
            FitError::Diverged { .. } => CliError::Diverged(e.to_string()),
            e => CliError::Fit(e),
        }
    }
}

impl From<DumpError> for CliError {
    fn from(e: DumpError) -> Self {
        CliError::Dump(e)
    }
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Data(d) => CliError::Data(d),
            e => CliError::Harness(e),
        }
    }
}
