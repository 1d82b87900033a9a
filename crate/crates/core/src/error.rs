use std::fmt;

/// Errors raised by the quantizer, the functional model and the file formats.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("accumulator overflow: {acc} + {term} leaves the 32-bit signed range")]
    AccumulatorOverflow { acc: i32, term: i128 },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("no positive samples to fit an activation scale")]
    NoPositiveMass,

    #[error("infeasible tile plan: {0}")]
    InfeasiblePlan(String),

    #[error("missing calibration data for layer {0}")]
    MissingCalibration(usize),

    #[error("{file}:{line}: {msg}")]
    Parse { file: String, line: usize, msg: String },

    #[error("layer {index}: {source}")]
    Layer {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    File {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn dim(msg: impl fmt::Display) -> Self {
        Error::Dimension(msg.to_string())
    }

    pub(crate) fn arg(msg: impl fmt::Display) -> Self {
        Error::InvalidArgument(msg.to_string())
    }

    pub(crate) fn parse(file: impl fmt::Display, line: usize, msg: impl fmt::Display) -> Self {
        Error::Parse {
            file: file.to_string(),
            line,
            msg: msg.to_string(),
        }
    }

    /// Wrap an I/O error with the path it concerns.
    pub(crate) fn file(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> Self + '_ {
        move |source| Error::File {
            path: path.display().to_string(),
            source,
        }
    }

    /// Attach a layer index to an error raised while processing that layer.
    pub fn in_layer(self, index: usize) -> Self {
        match self {
            e @ Error::Layer { .. } => e,
            e => Error::Layer {
                index,
                source: Box::new(e),
            },
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
