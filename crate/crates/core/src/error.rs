use std::path::PathBuf;

/// Errors produced by the registration toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("degenerate geometry: {0}")]
    Degenerate(String),

    #[error("invalid volume: {0}")]
    InvalidVolume(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("no salient structure in {0}")]
    NoSalientStructure(String),

    #[error("mesh too small for radius {radius} mm")]
    MeshTooSmall { radius: f64 },

    #[error("need at least 3 clusters, got {0}")]
    TooFewClusters(usize),

    #[error("objective is not finite at the start simplex")]
    NonFiniteObjective,

    #[error("empty level set at iso value {0}")]
    EmptyLevelSet(f64),

    #[error("expected exactly 10 landmarks, got {0}")]
    LandmarkCount(usize),

    #[error("overlapping teeth in phantom config: {0}")]
    OverlappingTeeth(String),

    #[error("schema error at `{path}`: {message}")]
    Schema { path: String, message: String },

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("cannot access {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// True for errors caused by unreadable or malformed user input, as opposed
    /// to failures inside the registration pipeline.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidArgument(_)
                | Error::Schema { .. }
                | Error::Parse { .. }
                | Error::Io { .. }
                | Error::InvalidMesh(_)
                | Error::InvalidVolume(_)
        )
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
