use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid space descriptor: {0}")]
    InvalidDescriptor(String),

    #[error("unknown space kind `{0}`")]
    UnknownKind(String),

    #[error("{kind} needs at least {min} points, got {got}")]
    TooFewPoints { kind: String, min: usize, got: usize },

    #[error("invalid sampled space: {0}")]
    InvalidSpace(String),

    #[error("index set is empty")]
    EmptySet,

    #[error("index {index} out of range for a space of {n} points")]
    IndexOutOfRange { index: usize, n: usize },

    #[error("{what} = {value} is below the sample resolution (needs > {min})")]
    BelowResolution { what: String, value: f64, min: f64 },

    #[error("graph is disconnected at bandwidth h = {h} (lambda_1 = {lambda1:e}); try a larger bandwidth")]
    Disconnected { h: f64, lambda1: f64 },

    #[error("{n} points exceeds the dense eigendecomposition cap of {cap}")]
    TooLarge { n: usize, cap: usize },

    #[error("eigendecomposition failed: {0}")]
    Eigen(String),

    #[error("spectral multiplier is not finite at eigenvalue {lambda:e}; project out the zero mode")]
    SingularMultiplier { lambda: f64 },

    #[error("function is not mean-zero (mean {mean:e}); required for a = 0 on a finite-mass space")]
    NotMeanZero { mean: f64 },

    #[error("L^p exponent must satisfy p >= 1, got {0}")]
    InvalidExponent(f64),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("unknown suite `{0}`")]
    UnknownSuite(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
