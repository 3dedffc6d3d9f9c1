use thiserror::Error;

/// Errors produced by the reconstruction toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid sampling request: {0}")]
    InvalidSampling(String),

    #[error("partial SVD did not converge after {iterations} Lanczos steps (relative residual {residual:.3e})")]
    SvdNotConverged { residual: f64, iterations: usize },

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("could not draw separated frequencies after {attempts} attempts")]
    InfeasibleSeparation { attempts: usize },

    #[error("metric undefined: {0}")]
    UndefinedMetric(&'static str),

    #[error("operation exceeds dense size guard ({size} > {limit})")]
    SizeGuard { size: usize, limit: usize },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("runtime failure: {0}")]
    Runtime(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

impl Error {
    /// True for errors caused by bad user input rather than a runtime failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidShape(_)
                | Error::DimensionMismatch { .. }
                | Error::InvalidSampling(_)
                | Error::Validation(_)
                | Error::Json(_)
                | Error::Toml(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(what: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            what,
            expected,
            found,
        })
    }
}
