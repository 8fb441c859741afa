use std::fmt;

use kfda_core::Error;

/// Failure classes, each with its own exit code.
#[derive(Debug, Clone, PartialEq)]
pub enum CliError {
    Usage(String),
    Data(String),
    Numeric(String),
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 64,
            CliError::Data(_) => 65,
            CliError::Numeric(_) => 70,
            CliError::Io(_) => 74,
        }
    }

    /// Classify a library error raised while computing on loaded data.
    pub fn from_compute(e: Error) -> Self {
        match e {
            Error::DegenerateSpectrum(_) | Error::NumericFailure(_) | Error::SingularCovariance(_) => {
                CliError::Numeric(e.to_string())
            }
            Error::InvalidAmplitude { .. } | Error::UnsupportedOrder { .. } => CliError::Usage(e.to_string()),
            Error::InvalidInput(_) | Error::DimensionMismatch { .. } => CliError::Data(e.to_string()),
        }
    }

    /// Classify a library error raised while validating settings.
    pub fn from_config(e: Error) -> Self {
        match e {
            Error::DegenerateSpectrum(_) | Error::NumericFailure(_) | Error::SingularCovariance(_) => {
                CliError::Numeric(e.to_string())
            }
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Numeric(m) => write!(f, "numeric error: {m}"),
            CliError::Io(m) => write!(f, "output error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}
