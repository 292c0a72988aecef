use thiserror::Error;

/// Errors raised by the modelling and estimation routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Input(String),

    #[error("dimension mismatch: expected {expected}, got {actual} ({what})")]
    Dimension {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("non-finite linear predictor in transition row {row}")]
    Overflow { row: usize },

    #[error("likelihood is zero at time index {t}: no state supports the observation")]
    ZeroLikelihood { t: usize },

    #[error("stationary distribution is not unique: {0}")]
    NonUnique(String),

    #[error("singular system: {0}")]
    Singular(String),

    #[error("observation outside the support of the emission family: {0}")]
    Domain(String),

    #[error("non-stationary autoregression: {0}")]
    NonStationary(String),

    #[error("grid point {z} lies outside the training range [{lo}, {hi}]")]
    Extrapolation { z: f64, lo: f64, hi: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    /// True for errors caused by the caller's data or parameters rather than by
    /// a numerical breakdown inside an algorithm.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Input(_)
                | Error::Dimension { .. }
                | Error::Domain(_)
                | Error::Extrapolation { .. }
                | Error::Io(_)
                | Error::Csv(_)
                | Error::Json(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
