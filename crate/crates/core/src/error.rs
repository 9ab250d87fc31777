use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid measure: {0}")]
    InvalidMeasure(String),

    #[error("time grids do not match: {0}")]
    GridMismatch(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error(
        "transport problem of size {rows}x{cols} exceeds the support cap of {cap} cells; \
         subsample the measures"
    )]
    SupportTooLarge { rows: usize, cols: usize, cap: usize },

    #[error("transport solver failed: {0}")]
    Transport(String),

    #[error("non-finite {what} for control {control}")]
    NonFinite { what: &'static str, control: usize },

    #[error("linear program failed: {0}")]
    LinearProgram(String),

    #[error("invariant box not found: {0}")]
    InvariantBoxNotFound(String),

    #[error("invariant box violated at node {node}: state {state:?} outside {lo:?}..{hi:?}")]
    InvariantBoxViolated {
        node: usize,
        state: Vec<f64>,
        lo: Vec<f64>,
        hi: Vec<f64>,
    },

    #[error("state grid too small: {0}")]
    StateGridTooSmall(String),

    #[error("invalid control: {0}")]
    InvalidControl(String),

    #[error("missing ledger entry `{0}`")]
    MissingLedgerEntry(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("inconsistent inputs: {0}")]
    Inconsistent(String),

    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}
