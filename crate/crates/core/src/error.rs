use std::path::PathBuf;

/// Errors raised by the numerical library and the command-line front end.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("singular state: {0}")]
    SingularState(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid plant: {0}")]
    InvalidPlant(String),

    #[error("singular loop: 1 + L(jw) vanishes at w = {omega}")]
    SingularLoop { omega: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("factorial cell (C={c}, B={b}, A={a}, replicate {replicate}) failed: {source}")]
    Cell {
        a: u8,
        b: u8,
        c: u8,
        replicate: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid_param(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
