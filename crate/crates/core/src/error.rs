use thiserror::Error;

/// Errors produced by the alignment library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("no points to process")]
    EmptyInput,

    #[error("invalid point cloud: {0}")]
    InvalidCloud(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("need at least {needed} point sets, got {got}")]
    TooFewClouds { needed: usize, got: usize },

    #[error("cloud count {clouds} does not match transform count {transforms}")]
    CountMismatch { clouds: usize, transforms: usize },

    #[error("instance has {points} points; the exact energy refuses more than {limit} unless forced")]
    InstanceTooLarge { points: usize, limit: usize },

    #[error("non-finite energy in set {set}: {detail}")]
    NonFiniteEnergy { set: usize, detail: String },

    #[error("cloud has {found} points, at least {needed} are required")]
    TooFewPoints { needed: usize, found: usize },

    #[error("normal equations ill-conditioned (condition estimate {condition:e})")]
    IllConditioned { condition: f64 },

    #[error("mass value must be positive, got {0}")]
    NonPositive(f64),

    #[error("index out of range: cloud {cloud}, point {point}")]
    IndexOutOfRange { cloud: usize, point: usize },

    #[error("cloud has no intensities")]
    MissingIntensities,

    #[error("clouds have different cardinalities ({0} vs {1})")]
    CardinalityMismatch(usize, usize),

    #[error("bad scenario: {0}")]
    BadSpec(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
