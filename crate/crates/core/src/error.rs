use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("state became non-finite at t = {last_valid_time}: {what}")]
    NonFinite { what: String, last_valid_time: f64 },

    #[error("invalid kernel: {0}")]
    InvalidKernel(String),

    #[error("invalid regime: {0}")]
    InvalidRegime(String),

    #[error("kernel jet inconsistent with kernel values: {0}")]
    JetMismatch(String),

    #[error("time {t} outside trajectory range [{start}, {end}]")]
    OutOfRange { t: f64, start: f64, end: f64 },

    #[error("grid too coarse: {reason}; need at least n = {required_n}")]
    Resolution { reason: String, required_n: usize },

    #[error("packet support exceeds grid: {0}")]
    Support(String),

    #[error("grid or time mismatch: {0}")]
    Mismatch(String),

    #[error("not enough samples: need {needed}, have {have}")]
    TooFewSamples { needed: usize, have: usize },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
