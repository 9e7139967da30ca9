use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate geodesic: angle {theta} is within {eps_cut} of 0 or pi")]
    DegenerateGeodesic { theta: f64, eps_cut: f64 },

    #[error("invalid point: {0}")]
    InvalidPoint(String),

    #[error("vector is not tangent at its base point (|<v,x>| = {inner:e}, |v| = {norm:e})")]
    NonTangent { inner: f64, norm: f64 },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("geodesic step |V| = {norm} exceeds the trust region {limit}")]
    StepTooLarge { norm: f64, limit: f64 },

    #[error("distance process is degenerate (gamma = {0:e})")]
    DegenerateDistance(f64),

    #[error("two-point motion reached the cut locus at step {step} (rho = {rho})")]
    StoppedAtCutLocus { step: usize, rho: f64 },

    #[error("eigen-index calibration failed: {0}")]
    Calibration(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
