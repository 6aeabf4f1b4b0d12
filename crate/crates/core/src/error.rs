use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("scene id {0} is not in the catalog (valid ids are 0..=5)")]
    InvalidScene(u32),

    #[error("scene {scene} has no route {route}")]
    UnknownRoute { scene: u32, route: u32 },

    #[error("unknown weather profile `{0}`")]
    UnknownWeather(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("unknown parameter `{0}`")]
    UnknownParam(String),

    #[error("ego is {distance:.2} m from the route (limit 10 m)")]
    OffRoute { distance: f64 },

    #[error("invalid command encoding: {0}")]
    InvalidCommand(String),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("metrics need at least one episode")]
    NoEpisodes,

    #[error("schema version mismatch: file has v{found}, reader expects v{expected}")]
    SchemaVersion { found: u32, expected: u32 },

    #[error("line {line}: {message}")]
    DatasetLine { line: usize, message: String },

    #[error("expert success rate {success_rate:.2} on scene {scene} is below 0.5; environment misconfigured")]
    ExpertQuality { scene: u32, success_rate: f64 },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("protocol: {0}")]
    Protocol(String),

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn file(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::File {
            path: path.into(),
            source,
        }
    }
}
