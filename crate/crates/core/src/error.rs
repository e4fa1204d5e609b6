use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("format error in '{layer}': {message}")]
    Format { layer: String, message: String },

    #[error("composition error: {0}")]
    Composition(String),

    #[error("input error: {0}")]
    Input(String),

    #[error("lookup error: {0}")]
    Lookup(String),

    #[error("numeric error in layer '{layer}': {message}")]
    Numeric { layer: String, message: String },

    #[error("annotation error: {0}")]
    Annotation(String),

    #[error("provider error: {0}")]
    Provider(String),

    #[error("generation error: {0}")]
    Generation(String),

    #[error("constraint error: covered area is {percent:.2}% of the image (limit 50%)")]
    Constraint { percent: f64 },

    #[error("parse error at '{path}': {message}")]
    Parse { path: String, message: String },

    #[error("construction error: {0}")]
    Construction(String),

    #[error("validation error in record {record}: {message}")]
    Validation { record: usize, message: String },

    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(layer: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Format {
            layer: layer.into(),
            message: message.into(),
        }
    }

    /// Wraps an error with the name of the pipeline stage that produced it.
    pub fn in_stage(self, stage: &'static str) -> Self {
        match self {
            already @ Error::Stage { .. } => already,
            other => Error::Stage {
                stage,
                source: Box::new(other),
            },
        }
    }
}
