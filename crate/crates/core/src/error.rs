use thiserror::Error;

/// Errors raised by the engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid batch: {0}")]
    InvalidBatch(String),

    #[error("loss must be a scalar, got shape {rows}x{cols}")]
    NonScalarLoss { rows: usize, cols: usize },

    #[error("qubit count {0} outside supported range 1..=12")]
    Capacity(usize),

    #[error("invalid gate: {0}")]
    InvalidGate(String),

    #[error("scale input {0} outside [-1, 1]")]
    ScaleDomain(f64),

    #[error("invalid circuit: {0}")]
    Construction(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("CFL violation: dt = {dt} exceeds stability limit {limit} (min(dx, dy)/sqrt(2))")]
    Cfl { dt: f64, limit: f64 },

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("unknown name '{value}' for {kind}")]
    UnknownName { kind: &'static str, value: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
