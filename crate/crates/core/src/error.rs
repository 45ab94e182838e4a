use thiserror::Error;

/// Errors raised anywhere in the protection pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid window: {0}")]
    InvalidWindow(String),

    /// Too many remote samples lost for the window to be trusted.
    #[error("degraded data: {missing} of {total} samples missing (limit {limit:.0}%)")]
    DegradedData {
        missing: usize,
        total: usize,
        limit: f64,
    },

    #[error("simulation failed: {0}")]
    Simulation(String),

    #[error("data integrity: {0}")]
    DataIntegrity(String),

    #[error("qp solver: {0}")]
    Solver(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for errors that signal corrupted or untrustworthy measurement data.
    pub fn is_data_integrity(&self) -> bool {
        matches!(self, Error::DataIntegrity(_) | Error::DegradedData { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
