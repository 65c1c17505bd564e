use thiserror::Error;

/// Errors raised by the engine.
#[derive(Debug, Error)]
pub enum MvhError {
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("singular {block} block of the volatility map at x = {x:?}")]
    SingularBlock { block: &'static str, x: Vec<f64> },
    #[error("singular matrix in {0}")]
    SingularMatrix(&'static str),
    #[error("{what} blew up at t = {t:.6}")]
    BlowUp { what: &'static str, t: f64 },
    #[error("covariance lost positive definiteness at t = {t:.6} (smallest eigenvalue {min_eig:e})")]
    NotPositiveDefinite { t: f64, min_eig: f64 },
    #[error("numeric overflow on path {path} at t = {t:.6}")]
    NumericOverflow { path: usize, t: f64 },
    #[error("configuration mismatch: {0}")]
    ConfigMismatch(String),
    #[error("expansion order {0} unsupported (maximum 3)")]
    OrderUnsupported(usize),
    #[error("path ensemble was simulated without flows")]
    FlowsMissing,
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, MvhError>;
