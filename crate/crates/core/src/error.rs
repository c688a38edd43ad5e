use thiserror::Error;

pub type Result<T> = std::result::Result<T, AdevError>;

#[derive(Debug, Error)]
pub enum AdevError {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("non-finite or malformed numeric input: {0}")]
    NumericInput(String),

    /// Internal numerical invariant broken (e.g. a development drifted off the unitary group).
    #[error("numerical invariant violated: {0}")]
    Numeric(String),

    #[error("conditional expectation undefined: {0}")]
    UndefinedConditional(String),

    #[error("training failed: {0}")]
    TrainingFailure(String),

    #[error("generation failed: {0}")]
    Generation(String),

    #[error("parse error at row {row}: {msg}")]
    Parse { row: usize, msg: String },

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl AdevError {
    /// Validation-type errors map to exit status 1, numeric/training failures to 2.
    pub fn exit_code(&self) -> i32 {
        match self {
            AdevError::Numeric(_)
            | AdevError::NumericInput(_)
            | AdevError::TrainingFailure(_)
            | AdevError::Generation(_) => 2,
            _ => 1,
        }
    }
}

pub(crate) fn shape_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(AdevError::Shape(msg.into()))
}

pub(crate) fn arg_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(AdevError::Argument(msg.into()))
}
