use thiserror::Error;

/// Command errors map onto exit codes: config 1, data 2, divergence 3.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("divergence: {0}")]
    Divergence(String),
    #[error("archive error: {0}")]
    Archive(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Data(_) | CliError::Archive(_) | CliError::Io(_) => 2,
            CliError::Divergence(_) => 3,
        }
    }

    /// Classify a core error by its cause.
    pub fn from_core(e: cosmos_core::Error) -> Self {
        use cosmos_core::Error as E;
        match e {
            E::Divergence { .. } | E::NonFinite(_) => CliError::Divergence(e.to_string()),
            E::Io { .. } | E::Format(_) | E::EmptyBatch | E::LabelOutOfRange { .. } => {
                CliError::Data(e.to_string())
            }
            other => CliError::Config(other.to_string()),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
