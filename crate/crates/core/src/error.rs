use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("non-passive object: largest singular value {0} exceeds 1")]
    NonPassive(f64),

    #[error("unphysical visibility: amplitude {amplitude} exceeds DC level {dc}")]
    UnphysicalVisibility { amplitude: f64, dc: f64 },

    #[error("singular normal equations in sinusoid fit")]
    SingularFit,

    #[error("model-inconsistent DC level in dataset {dataset}: radicand {radicand}")]
    ModelInconsistentDc { dataset: String, radicand: f64 },

    #[error("probe normalization off by {0} before renormalization")]
    ProbeNormalization(f64),

    #[error("passivity violated by {0} after refinement")]
    PassivityViolation(f64),

    #[error("malformed dataset: {0}")]
    MalformedDataset(String),

    #[error("missing datasets: {}", .0.join(", "))]
    MissingDatasets(Vec<String>),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
