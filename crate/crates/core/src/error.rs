use thiserror::Error;

/// Errors raised across the simulator.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid dimension {0}: need L >= 2")]
    InvalidDimension(usize),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid projector setting: {0}")]
    InvalidSetting(String),

    #[error("OAM label {0} is outside the mode band")]
    OutOfBand(i32),

    #[error("azimuthal grid of {samples} samples aliases harmonics up to |l| = {max_label} (need >= {required})")]
    Aliasing {
        samples: usize,
        max_label: i32,
        required: usize,
    },

    #[error("{name} = {value} is outside its domain {domain}")]
    Domain {
        name: &'static str,
        value: f64,
        domain: &'static str,
    },

    #[error("input state is not normalized (norm^2 = {0})")]
    NotNormalized(f64),

    #[error("click probabilities sum to {0} > 1")]
    ProbabilityOverflow(f64),

    #[error("round {0} has no click and cannot be sifted")]
    NotSiftable(u64),

    #[error("{0}")]
    ResourceLimit(String),

    #[error("QBER is undefined: total click probability is zero")]
    UndefinedQber,

    #[error("channel {0} does not act on state vectors")]
    NotAStateMap(&'static str),

    #[error("bad channel descriptor: {0}")]
    BadDescriptor(String),

    #[error("matrix format: {0}")]
    Format(String),

    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_probability(name: &'static str, value: f64) -> Result<f64> {
    if (0.0..=1.0).contains(&value) {
        Ok(value)
    } else {
        Err(Error::Domain {
            name,
            value,
            domain: "[0, 1]",
        })
    }
}
