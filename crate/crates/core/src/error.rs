use thiserror::Error;

use crate::geocrypto::CryptoError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error: {0}")]
    Parse(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("unknown node `{0}`")]
    UnknownNode(String),

    #[error("unknown arc `{0}`")]
    UnknownArc(String),

    #[error("unknown pothole `{0}`")]
    UnknownPothole(String),

    #[error("unknown vehicle `{0}`")]
    UnknownVehicle(String),

    #[error("offset {offset} m outside arc `{arc}` of length {length} m")]
    OffsetOutOfRange {
        arc: String,
        offset: f64,
        length: f64,
    },

    #[error("invalid depth {0} mm")]
    InvalidDepth(f64),

    #[error("weight multiset for ({0}, {1}) is empty")]
    EmptyMultiset(String, String),

    #[error("negative weight {weight} on arc `{arc}`")]
    NegativeWeight { arc: String, weight: f64 },

    #[error("destination `{dest}` unreachable from `{from}`")]
    Unreachable { from: String, dest: String },

    #[error("invalid sweep window [{start}, {end}]")]
    InvalidWindow { start: f64, end: f64 },

    #[error("depth map and intensity image dimensions differ")]
    GridMismatch,

    #[error("threshold must be positive, got {0}")]
    InvalidThreshold(f64),

    #[error("malformed request: {0}")]
    MalformedRequest(String),

    #[error(transparent)]
    Crypto(#[from] CryptoError),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl From<serde_json::Error> for Error {
    fn from(err: serde_json::Error) -> Self {
        Error::Parse(err.to_string())
    }
}
