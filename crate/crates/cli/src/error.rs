use bbm_core::LabError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("{0}")]
    Lab(#[from] LabError),

    #[error("acceptance failure: {0}")]
    Failed(String),
}

impl CliError {
    /// 0 success, 1 acceptance failure, 2 usage or configuration, 3 IO.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Failed(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Io(_) | CliError::Lab(LabError::Io(_)) => 3,
            CliError::Lab(_) => 2,
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Lab(LabError::Json(e))
    }
}
