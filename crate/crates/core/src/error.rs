use thiserror::Error;

/// Errors raised by the simulation library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("empty sample list")]
    EmptySamples,

    #[error("infinite moment: shape {shape} does not exceed order {order}")]
    InfiniteMoment { shape: f64, order: f64 },

    #[error("quadrature did not reach relative tolerance {tolerance:e} (estimate {estimate:e})")]
    Quadrature { tolerance: f64, estimate: f64 },

    #[error("moment certificate failed for arm {arm}: E|X-mu|^{order} = {moment} > v = {bound}")]
    Certificate {
        arm: usize,
        order: f64,
        moment: f64,
        bound: f64,
    },

    #[error("reward count {got} does not match the planned batch length {expected}")]
    RewardMismatch { expected: usize, got: usize },

    #[error("policy planned {planned} steps at t = {t}, overrunning horizon {horizon}")]
    HorizonOverrun { t: u64, planned: usize, horizon: u64 },

    #[error("policy returned no plan at t = {t} before reaching horizon {horizon}")]
    PolicyStalled { t: u64, horizon: u64 },

    #[error("instance has no reward sampler: {0}")]
    NoSampler(String),

    #[error("replication {replication}: {source}")]
    Replication {
        replication: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("{context}: {source}")]
    Csv {
        context: String,
        #[source]
        source: csv::Error,
    },

    #[error("{0}")]
    Malformed(String),
}

impl Error {
    /// Whether the error stems from bad input (parameters, configs, files
    /// with the wrong shape) rather than from a failure during a run.
    pub fn is_config(&self) -> bool {
        match self {
            Self::InvalidParameter { .. }
            | Self::InfiniteMoment { .. }
            | Self::Certificate { .. }
            | Self::NoSampler(_)
            | Self::Json { .. }
            | Self::Csv { .. }
            | Self::Malformed(_) => true,
            Self::Replication { source, .. } => source.is_config(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
