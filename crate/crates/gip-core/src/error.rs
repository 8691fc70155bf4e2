use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid coordinate ({lon}, {lat}): {reason}")]
    InvalidCoordinate { lon: f64, lat: f64, reason: &'static str },

    #[error("zone `{zone}`: degenerate polygon ({reason})")]
    DegeneratePolygon { zone: String, reason: String },

    #[error("duplicate zone id `{0}`")]
    DuplicateZone(String),

    #[error("unknown zone id `{0}`")]
    UnknownZone(String),

    #[error("zone set is empty")]
    EmptyZoneSet,

    #[error("zone set mixes polygon and centroid-only zones")]
    MixedGeometry,

    #[error("empty flow matrix after filtering ({0})")]
    EmptyFlowMatrix(String),

    #[error("degenerate distance between distinct zones `{0}` and `{1}`")]
    DegenerateDistance(String, String),

    #[error("graph has no nodes")]
    EmptyGraph,

    #[error("graph has zero total edge weight")]
    ZeroWeight,

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("training set is empty")]
    EmptyTrainingSet,

    #[error("attribute `{0}` is absent from every zone")]
    MissingAttribute(String),

    #[error("partition does not cover the graph: {0}")]
    InvalidPartition(String),

    #[error("covers are defined over different node universes ({0} vs {1} nodes)")]
    UniverseMismatch(usize, usize),

    #[error("{path}: {message}")]
    Parse { path: String, message: String },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter { name, reason: reason.into() }
    }

    pub fn parse(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse { path: path.into(), message: message.into() }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// True when the failure stems from bad input rather than a bug or an
    /// environment fault. The CLI maps this to its usage/input exit code.
    pub fn is_input_error(&self) -> bool {
        !matches!(self, Error::Io { source, .. } if source.kind() != std::io::ErrorKind::NotFound)
    }
}
