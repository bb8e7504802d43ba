use thiserror::Error;

/// Errors produced by the simulation, reconstruction and I/O layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected:?}, got {actual:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("problem too large: {size} exceeds the limit of {limit}")]
    TooLarge { size: usize, limit: usize },

    #[error("contour band is empty; retry with a new seed or contour level")]
    EmptyContour,

    #[error("calibration diverged (loss increased for {epochs} consecutive epochs); loss tail: {tail:?}")]
    Diverged { epochs: usize, tail: Vec<f64> },

    #[error("malformed data: {0}")]
    Format(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

pub(crate) fn check_dims(expected: (usize, usize), actual: (usize, usize)) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, actual })
    }
}
