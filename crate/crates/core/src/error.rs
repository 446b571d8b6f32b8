use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: String,
        actual: String,
    },

    #[error("{name} is not {kind} (smallest eigenvalue {min_eigenvalue:.3e})")]
    NotDefinite {
        name: &'static str,
        kind: &'static str,
        min_eigenvalue: f64,
    },

    #[error("matrix has zero spectral radius and cannot be rescaled")]
    ZeroSpectralRadius,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("time index {t} out of range for horizon {horizon}")]
    TimeOutOfRange { t: usize, horizon: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::Dimension {
            context,
            expected: expected.to_string(),
            actual: actual.to_string(),
        })
    }
}

pub(crate) fn check_shape(
    context: &'static str,
    expected: (usize, usize),
    actual: (usize, usize),
) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::Dimension {
            context,
            expected: format!("{}x{}", expected.0, expected.1),
            actual: format!("{}x{}", actual.0, actual.1),
        })
    }
}
