use thiserror::Error;

/// Failures surfaced by the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration at `{path}`: {message}")]
    Config { path: String, message: String },
    #[error("nonpositive weight {value} on edge ({a}, {b})")]
    NonpositiveWeight { a: usize, b: usize, value: f64 },
    #[error("nonpositive measure {value} at node {node}")]
    NonpositiveMeasure { node: usize, value: f64 },
    #[error("graph is disconnected ({components} components)")]
    Disconnected { components: usize },
    #[error("eigensolver failure: {0}")]
    Eigensolver(String),
    #[error("energy {energy} sits on threshold {threshold} of mode {mode}")]
    Threshold { energy: f64, mode: usize, threshold: f64 },
    #[error("exceptional energy {energy}: closed system has reciprocal condition {rcond:e}")]
    Exceptional { energy: f64, rcond: f64 },
    #[error("singular linear system at pivot {0}")]
    Singular(usize),
    #[error("invalid geometry: {0}")]
    Geometry(String),
    #[error("interior disconnected after removing the obstacle")]
    InteriorDisconnected,
    #[error("energy {energy} is not below threshold {threshold} of mode {mode}")]
    NotEvanescent { energy: f64, mode: usize, threshold: f64 },
    #[error("energy {energy} is not above threshold {threshold} of mode {mode}")]
    NotPropagating { energy: f64, mode: usize, threshold: f64 },
    #[error("growing mode overflow: exponent {0} exceeds the guard")]
    Overflow(f64),
    #[error("far-field fit residual {residual:e} exceeds {limit:e} in end {end}, mode {mode}")]
    FarFieldContamination { end: usize, mode: usize, residual: f64, limit: f64 },
    #[error("z = {z} lies within {distance:e} of an eigenvalue")]
    PoleProximity { z: String, distance: f64 },
    #[error("unresolved pole cluster in circle at {center} radius {radius} (gap estimate {gap:e})")]
    UnresolvedCluster { center: f64, radius: f64, gap: f64 },
    #[error("trace family rank {rank} below {needed}")]
    RankDeficient { rank: usize, needed: usize },
    #[error("unstable time stepping: {0}")]
    Unstable(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization: {0}")]
    Serde(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config { path: path.into(), message: message.into() }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}
