use std::fmt;
use std::path::Path;

use trapsift::backend::BackendError;
use trapsift::bench::{BenchError, MemoryError};
use trapsift::filterpipe::watch::WatchError;
use trapsift::filterpipe::FilterError;
use trapsift::manifest::ManifestError;
use trapsift::metrics::MetricsError;
use trapsift::report::ReportError;
use trapsift::scorestore::ScoreError;
use trapsift::splitgen::SplitError;

/// Process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitCode {
    Usage = 2,
    Data = 3,
    Backend = 4,
}

#[derive(Debug)]
pub struct CliError {
    pub code: ExitCode,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        CliError {
            code: ExitCode::Usage,
            message: message.into(),
        }
    }

    pub fn data(message: impl fmt::Display) -> Self {
        CliError {
            code: ExitCode::Data,
            message: message.to_string(),
        }
    }

    pub fn backend(message: impl fmt::Display) -> Self {
        CliError {
            code: ExitCode::Backend,
            message: message.to_string(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

pub type CliResult<T = ()> = Result<T, CliError>;

pub fn require_file(flag: &str, path: &Path) -> CliResult {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::usage(format!("{flag}: no such file {}", path.display())))
    }
}

macro_rules! data_errors {
    ($($t:ty),*) => {
        $(impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::data(e)
            }
        })*
    };
}

data_errors!(ManifestError, SplitError, ScoreError, MetricsError, ReportError);

impl From<BackendError> for CliError {
    fn from(e: BackendError) -> Self {
        CliError::backend(e)
    }
}

impl From<BenchError> for CliError {
    fn from(e: BenchError) -> Self {
        match e {
            BenchError::Backend { .. } => CliError::backend(e),
            other => CliError::usage(other.to_string()),
        }
    }
}

impl From<MemoryError> for CliError {
    fn from(e: MemoryError) -> Self {
        CliError::backend(e)
    }
}

impl From<FilterError> for CliError {
    fn from(e: FilterError) -> Self {
        match e {
            FilterError::Config(m) => CliError::usage(m),
            FilterError::Backend { .. } => CliError::backend(e),
            FilterError::Log { .. } => CliError::data(e),
        }
    }
}

impl From<WatchError> for CliError {
    fn from(e: WatchError) -> Self {
        match e {
            WatchError::Filter(f) => f.into(),
            WatchError::Pattern(p) => CliError::usage(p.to_string()),
            other => CliError::data(other),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::data(e)
    }
}
