use thiserror::Error;

/// Failures of the runner, each with a stable process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("numerical failure in {module}::{operation}: {source}")]
    Numerical {
        module: &'static str,
        operation: &'static str,
        #[source]
        source: maxsub::Error,
    },

    #[error("cannot write output: {0}")]
    Output(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical { .. } => 3,
            CliError::Output(_) => 1,
        }
    }
}

pub(crate) trait During<T> {
    fn during(self, module: &'static str, operation: &'static str) -> Result<T, CliError>;
}

impl<T> During<T> for maxsub::Result<T> {
    fn during(self, module: &'static str, operation: &'static str) -> Result<T, CliError> {
        self.map_err(|source| CliError::Numerical {
            module,
            operation,
            source,
        })
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Output(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Output(e.to_string())
    }
}
