use thiserror::Error;

/// Errors raised by the simulator, the diagnostics and the certificate builder.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("history lookup for agent {agent} at s = {s} is outside the covered window [{lo}, {hi}]")]
    Window { agent: usize, s: f64, lo: f64, hi: f64 },

    #[error("state error: {0}")]
    State(String),

    #[error("step constraint violated: dt = {dt} must not exceed the smallest positive delay tau_min = {tau_min}")]
    StepConstraint { dt: f64, tau_min: f64 },

    #[error("numeric blow-up: non-finite value at t = {t}")]
    NumericBlowUp { t: f64 },

    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("insufficient data: {usable} usable records, need at least {needed}")]
    InsufficientData { usable: usize, needed: usize },

    #[error("usage error: {0}")]
    Usage(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
