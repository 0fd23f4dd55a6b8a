//! Error taxonomy of the command line tool, mapped to exit codes:
//! configuration problems exit 2, data problems exit 3, solver failures
//! exit 4.

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("solver error: {0}")]
    Solver(String),
    /// Aggregation over an empty record group.
    #[error("empty group: {0}")]
    EmptyGroup(String),
    /// Plot data requires aligned epoch grids within each group.
    #[error("alignment error: {0}")]
    Alignment(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::EmptyGroup(_) | CliError::Alignment(_) => 2,
            CliError::Data(_) => 3,
            CliError::Solver(_) => 4,
        }
    }

    pub fn config(e: impl std::fmt::Display) -> Self {
        CliError::Config(e.to_string())
    }

    pub fn data(e: impl std::fmt::Display) -> Self {
        CliError::Data(e.to_string())
    }

    pub fn solver(e: impl std::fmt::Display) -> Self {
        CliError::Solver(e.to_string())
    }
}
