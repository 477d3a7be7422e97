use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{source_name}:{line}: {msg}")]
    Parse {
        source_name: String,
        line: u64,
        msg: String,
    },

    #[error("{source_name}:{line}: unknown location id `{id}`")]
    UnknownLocation {
        source_name: String,
        line: u64,
        id: String,
    },

    #[error("{source_name}:{line}: transportation record without a start/end flag")]
    MissingTripFlag { source_name: String, line: u64 },

    #[error("duplicate location id `{0}`")]
    DuplicateLocation(String),

    #[error("invalid coordinate: {0}")]
    InvalidCoordinate(String),

    #[error("config: {0}")]
    Config(String),

    #[error("cannot tessellate an empty set of sites")]
    NoSites,

    #[error("invalid match parameters: {0}")]
    InvalidParams(String),

    #[error("distribution tail mass {0} exceeds 1")]
    CorruptHistogram(f64),

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("group ({t_bin}, {c_bin}): {observed} observed pairs exceed the {capacity} possible pairs")]
    InconsistentPopulation {
        t_bin: usize,
        c_bin: usize,
        observed: u64,
        capacity: u64,
    },

    #[error("curve fit: {0}")]
    DegenerateFit(String),

    #[error("no eligible users")]
    NoEligibleUsers,

    #[error("every activity bin is excluded")]
    AllExcluded,

    #[error("distributions share no support")]
    EmptySupport,

    #[error("synthetic config: {0}")]
    InvalidSynthConfig(String),

    #[error("cache: {0}")]
    Cache(String),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by the content of input data rather than by
    /// how the program was invoked.
    pub fn is_data_error(&self) -> bool {
        !matches!(self, Error::Config(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
