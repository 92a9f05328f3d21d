use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("no annotated instance reaches IoU {min_iou} with the target (best {best_iou:.4})")]
    NoMatch { min_iou: f64, best_iou: f64 },
    #[error("{path}: {message}")]
    Bundle { path: String, message: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

/// Failure to read a model response.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("response contains no JSON value")]
    NoJson,
    #[error("malformed JSON: {0}")]
    InvalidJson(String),
    #[error("expected a JSON object")]
    NotAnObject,
    #[error("expected a JSON list at top level")]
    NotAList,
    #[error("missing key \"{0}\"")]
    MissingKey(&'static str),
    #[error("box must have 9 numbers, found {0}")]
    Arity(usize),
    #[error("box element {index} is not a finite number")]
    BadNumber { index: usize },
    #[error("\"frame\" must be a non-negative integer")]
    BadFrame,
    #[error("\"label\" must be a non-empty string")]
    BadLabel,
    #[error("box sizes must be non-negative")]
    NegativeSize,
    #[error("entry {index}: {source}")]
    Entry {
        index: usize,
        #[source]
        source: Box<ParseError>,
    },
}
