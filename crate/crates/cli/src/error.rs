use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("{0}")]
    NotConverged(String),

    #[error(transparent)]
    Core(#[from] botnet_core::Error),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use botnet_core::Error as Core;
        match self {
            CliError::Config(_) => 2,
            CliError::NotConverged(_) => 3,
            CliError::Core(Core::NoConvergence { .. }) => 3,
            CliError::Core(Core::Io(_)) | CliError::Io(_) | CliError::Json(_) => 4,
            CliError::Core(Core::Csv(e)) | CliError::Csv(e) if e.is_io_error() => 4,
            CliError::Core(_) | CliError::Csv(_) => 2,
        }
    }
}
