use thiserror::Error;

/// A failed command, classified by exit code.
#[derive(Debug, Error)]
pub enum Failure {
    /// Bad flags or configuration (exit 1).
    #[error("{0}")]
    Usage(String),
    /// Input data missing, malformed or unusable (exit 2).
    #[error("{0}")]
    Data(String),
    /// A bug (exit 3).
    #[error("internal error: {0}")]
    Internal(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Internal(_) => 3,
        }
    }
}

impl From<loadclust::Error> for Failure {
    fn from(e: loadclust::Error) -> Self {
        match e {
            loadclust::Error::InvalidParameter { .. } => Failure::Usage(e.to_string()),
            other => Failure::Data(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Data(format!("i/o error: {e}"))
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Data(format!("json error: {e}"))
    }
}
