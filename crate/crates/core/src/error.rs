use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeoError {
    #[error("latitude {0} outside [-90, 90]")]
    InvalidLatitude(f64),
    #[error("longitude {0} is not finite")]
    InvalidLongitude(f64),
    #[error("cannot parse position {0:?}, expected \"lat,lon\"")]
    Parse(String),
}

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed mesh file: {0}")]
    Csv(#[from] csv::Error),
    #[error("atlas request failed: {0}")]
    Http(String),
    #[error("atlas response could not be decoded: {0}")]
    Decode(String),
    #[error("no valid landmarks in source ({rejected} records rejected)")]
    NoLandmarks { rejected: usize },
    #[error("mesh is empty after filtering ({rejected} rows rejected)")]
    EmptyMesh { rejected: usize },
    #[error("duplicate landmark id {0:?}")]
    DuplicateId(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DispersionError {
    #[error("m must be at least 1")]
    ZeroCount,
    #[error("asked for {wanted} dispersed points but only {available} candidates")]
    NotEnoughCandidates { wanted: usize, available: usize },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProbeError {
    #[error("no reply from {target} after {attempts} attempts")]
    Timeout { target: String, attempts: u32 },
    #[error("raw ICMP socket not permitted ({0}); run as root, grant CAP_NET_RAW (setcap cap_net_raw+ep <binary>), or widen net.ipv4.ping_group_range")]
    PermissionDenied(String),
    #[error("landmark {0} has no IPv4 address")]
    NoAddress(String),
    #[error("landmark {0} unknown to the backend")]
    UnknownTarget(String),
    #[error("socket error: {0}")]
    Io(String),
}

impl ProbeError {
    /// Errors that make every further measurement pointless.
    pub fn is_fatal(&self) -> bool {
        matches!(self, ProbeError::PermissionDenied(_))
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimateError {
    #[error("no delays to normalize")]
    Empty,
    #[error("delay for {0} is not a positive number")]
    NonPositiveDelay(String),
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read scenario {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid scenario: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}
