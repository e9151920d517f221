use thiserror::Error;

/// Errors raised by kernels, estimators, samplers and the harness.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum KsdError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("point outside the admissible domain: {0}")]
    Domain(String),

    #[error("kernel evaluation failed at pair ({i}, {j}): {source}")]
    AtPair {
        i: usize,
        j: usize,
        #[source]
        source: Box<KsdError>,
    },

    #[error("kernel evaluation failed at point {index}: {source}")]
    AtPoint {
        index: usize,
        #[source]
        source: Box<KsdError>,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("{0}")]
    Parse(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl KsdError {
    pub(crate) fn at_point(index: usize, source: KsdError) -> Self {
        KsdError::AtPoint {
            index,
            source: Box::new(source),
        }
    }

    pub(crate) fn at_pair(i: usize, j: usize, source: KsdError) -> Self {
        KsdError::AtPair {
            i,
            j,
            source: Box::new(source),
        }
    }
}

impl From<std::io::Error> for KsdError {
    fn from(e: std::io::Error) -> Self {
        KsdError::Io(e.to_string())
    }
}

pub type Result<T, E = KsdError> = std::result::Result<T, E>;
