use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("validation: {0}")]
    Validation(String),
    #[error("solver limit: {0}")]
    SolverLimit(String),
    #[error("instance too large: {0}")]
    TooLarge(String),
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Validation(_) => 3,
            CliError::SolverLimit(_) => 4,
            CliError::TooLarge(_) => 5,
            CliError::Io(_) | CliError::Other(_) => 1,
        }
    }
}
