//! Crate-wide error type.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid input: broken invariants, out-of-range configuration,
    /// malformed files.
    #[error("validation: {0}")]
    Validation(String),

    /// Too few usable observations to fit a model.
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// Depth values carry no signal (zero spread at the sample locations).
    #[error("degenerate depth: {0}")]
    DegenerateDepth(String),

    /// Scene manifest problems, annotated with the offending file.
    #[error("manifest {path}: {message}")]
    Manifest { path: PathBuf, message: String },

    /// A pipeline stage failed; carries the stage name and view context.
    #[error("stage {stage} failed ({context}): {source}")]
    Stage {
        stage: &'static str,
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("image: {0}")]
    Image(#[from] image::ImageError),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Wrap an error with pipeline stage context.
    pub fn stage(stage: &'static str, context: impl Into<String>, source: Error) -> Self {
        Error::Stage {
            stage,
            context: context.into(),
            source: Box::new(source),
        }
    }

    /// Process exit code the CLI maps this error to: 2 for validation
    /// failures, 3 for stage failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Stage { .. } => 3,
            _ => 2,
        }
    }
}
