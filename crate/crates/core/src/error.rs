use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("unsupported order: degree {degree} exceeds the cap of {max}")]
    UnsupportedOrder { degree: usize, max: usize },

    #[error("degenerate spectrum: {0}")]
    DegenerateSpectrum(String),

    #[error("numeric failure: {0}")]
    NumericFailure(String),

    #[error("singular pooled covariance: {0}")]
    SingularCovariance(String),

    #[error("invalid amplitude: eta = {eta} violates eta * sqrt(2) < 1")]
    InvalidAmplitude { eta: f64 },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// Prefix the message with where the failure happened (e.g. a point index).
    pub fn context(self, ctx: impl std::fmt::Display) -> Self {
        match self {
            Error::InvalidInput(m) => Error::InvalidInput(format!("{ctx}: {m}")),
            Error::DegenerateSpectrum(m) => Error::DegenerateSpectrum(format!("{ctx}: {m}")),
            Error::NumericFailure(m) => Error::NumericFailure(format!("{ctx}: {m}")),
            Error::SingularCovariance(m) => Error::SingularCovariance(format!("{ctx}: {m}")),
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
