use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("missing artifact {artifact}: run `{command}` first")]
    Missing {
        artifact: String,
        command: &'static str,
    },

    #[error("{0} (rerun with --force to accept)")]
    Stale(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error(transparent)]
    Core(ratgen::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<ratgen::Error> for CliError {
    fn from(e: ratgen::Error) -> Self {
        match e {
            ratgen::Error::NonFinite(m) => CliError::Numeric(m),
            other => CliError::Core(other),
        }
    }
}

impl CliError {
    /// 0 success, 2 config error, 3 missing artifact, 4 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Stale(_) => 2,
            CliError::Missing { .. } => 3,
            CliError::Numeric(_) => 4,
            CliError::Core(_) | CliError::Io(_) => 1,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
