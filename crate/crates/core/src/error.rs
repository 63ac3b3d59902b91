use thiserror::Error;

/// Errors produced by the simulator.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid parameters or inconsistent inputs. Maps to exit code 2 in the CLI.
    #[error("configuration error: {0}")]
    Config(String),
    /// A register could not hold the requested code (fewer atoms than the distance).
    #[error("load failure: {needed} atoms required, {available} present")]
    LoadFailure { needed: usize, available: usize },
    /// Numerical fitting could not proceed (degenerate or invalid data).
    #[error("fit error: {0}")]
    Fit(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// True for errors caused by user-supplied configuration.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
