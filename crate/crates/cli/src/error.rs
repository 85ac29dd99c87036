use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("numerical abort at step {step} (epoch {epoch}): {msg}")]
    Numerical { step: u64, epoch: usize, msg: String },

    #[error(transparent)]
    Core(ccnn::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type CliResult<T> = Result<T, CliError>;

impl From<ccnn::Error> for CliError {
    fn from(e: ccnn::Error) -> Self {
        match e {
            ccnn::Error::Config(m) => CliError::Config(m),
            e => CliError::Core(e),
        }
    }
}

impl CliError {
    /// 2 for configuration problems, 3 for numerical aborts, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical { .. } => 3,
            _ => 1,
        }
    }
}
