use thiserror::Error;

#[derive(Debug, Error)]
pub enum AppError {
    /// Configuration rejected before any computation.
    #[error("invalid config field `{field}`: {message}")]
    Validation { field: String, message: String },

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: pmeinv_core::Error,
    },

    #[error("line {line}: {message}")]
    Format { line: usize, message: String },

    #[error("io: {0}")]
    Io(String),

    #[error("missing artifact: {0}")]
    MissingArtifact(String),

    #[error("{failed} invariant check(s) failed")]
    InvariantFailure { failed: usize },
}

impl AppError {
    pub fn validation(field: impl Into<String>, message: impl Into<String>) -> AppError {
        AppError::Validation {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn stage(stage: &str) -> impl FnOnce(pmeinv_core::Error) -> AppError + '_ {
        move |source| AppError::Stage {
            stage: stage.to_string(),
            source,
        }
    }

    /// Process exit status for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Validation { .. } => 2,
            AppError::InvariantFailure { .. } => 4,
            _ => 3,
        }
    }
}
