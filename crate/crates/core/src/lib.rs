//! Spatio-temporal traffic imputation with a mixture of attention experts.
//!
//! The pipeline: [`datakit`] loads or synthesizes a traffic series and
//! injects missing patterns, [`wavefeat`] builds the two embedded input
//! streams, [`temporal`] and [`lrsgat`] are the temporal and spatial
//! experts, [`moe`] gates and reads them out, and [`trainer`] fits and
//! scores the model. Everything runs on the small reverse-mode substrate in
//! [`numcore`].

pub mod cli;
pub mod config;
pub mod datakit;
pub mod layers;
pub mod lrsgat;
pub mod moe;
pub mod numcore;
pub mod temporal;
pub mod trainer;
pub mod wavefeat;

pub use numcore::{Array, NumError};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Num(#[from] NumError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    /// Malformed input data (ragged rows, shape disagreements, bad cells).
    #[error("data: {0}")]
    Data(String),
    /// An argument or configuration value outside its allowed range.
    #[error("invalid: {0}")]
    Invalid(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("non-finite {0}")]
    NonFinite(String),
    /// A built-in self-check (such as the gradient check) did not hold.
    #[error("self-check failed: {0}")]
    SelfCheck(String),
}

impl Error {
    /// True for errors caused by the caller's inputs rather than a bug or
    /// environment failure.
    pub fn is_user_error(&self) -> bool {
        matches!(
            self,
            Error::Data(_) | Error::Invalid(_) | Error::Checkpoint(_) | Error::Csv(_) | Error::Json(_)
        ) || matches!(self, Error::Io(e) if e.kind() == std::io::ErrorKind::NotFound)
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
