use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid window length {m}: need 2 <= m < n (n = {n})")]
    InvalidWindow { m: usize, n: usize },

    #[error("insufficient data: n = {n} observations for a window of {window}")]
    InsufficientData { n: usize, window: usize },

    #[error("argument out of domain: {0}")]
    Domain(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("invalid specification: {0}")]
    InvalidSpec(String),

    #[error("model violation: sigma^2({t}, {x}) = {value} < 0")]
    ModelViolation { t: f64, x: f64, value: f64 },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("time grid is not uniform at row {row}")]
    NonUniformGrid { row: usize },

    #[error("near-singular design matrix (condition estimate {cond:.3e})")]
    NearSingular { cond: f64 },

    #[error("degenerate variance estimate: standardising process is zero everywhere")]
    DegenerateVariance,

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("fit failure: {0}")]
    FitFailure(String),

    #[error("bootstrap unstable: {failed} of {total} replications failed")]
    BootstrapUnstable { failed: usize, total: usize },

    #[error("study aborted: {failed} of {total} replications failed")]
    StudyAborted { failed: usize, total: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}
