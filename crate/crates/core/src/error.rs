use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Where in an input file a problem was found.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Location {
    pub path: Option<PathBuf>,
    pub line: usize,
}

impl std::fmt::Display for Location {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match &self.path {
            Some(p) => write!(f, "{}:{}", p.display(), self.line),
            None => write!(f, "line {}", self.line),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid box [{x_min}, {y_min}, {x_max}, {y_max}]: negative extent")]
    InvalidBox {
        x_min: f64,
        y_min: f64,
        x_max: f64,
        y_max: f64,
    },

    #[error("cannot merge an empty set of boxes (final prediction has no associated candidates)")]
    EmptyMerge,

    #[error("degenerate box: center closeness needs a positive diagonal")]
    DegenerateBox,

    #[error("{location}: malformed JSON: {message}")]
    Json { location: Location, message: String },

    #[error("{location}: schema violation: {message}")]
    Schema { location: Location, message: String },

    #[error("{location}: invalid value in `{field}`: {message}")]
    Invariant {
        location: Location,
        field: String,
        message: String,
    },

    #[error("invalid parameter `{name}`: {message}")]
    InvalidParam { name: &'static str, message: String },

    #[error("no images")]
    NoImages,

    #[error("image `{0}` has no ground truth")]
    MissingGroundTruth(String),

    #[error("no ground-truth objects in the dataset; mAP is undefined")]
    NoGroundTruthObjects,

    #[error("rank-deficient design: column `{column}` is collinear with {others:?}")]
    RankDeficient { column: String, others: Vec<String> },

    #[error("need at least {needed} samples to fit {features} feature(s), got {got}")]
    TooFewSamples {
        needed: usize,
        features: usize,
        got: usize,
    },

    #[error("non-finite value in feature `{0}`")]
    NonFinite(String),

    #[error("missing feature `{0}`")]
    MissingFeature(String),

    #[error("feature set mismatch: model expects {expected:?}, got {got:?}")]
    FeatureMismatch {
        expected: Vec<String>,
        got: Vec<String>,
    },

    #[error("summary `{0}` has no true mAP")]
    MissingTarget(String),

    #[error("summary `{0}` has no source")]
    MissingSource(String),

    #[error("source `{0}` has no untransformed test summary")]
    MissingTestSummary(String),

    #[error("leave-one-out needs at least {needed} source groups, got {got}")]
    TooFewSources { needed: usize, got: usize },

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("empty input")]
    EmptyInput,

    #[error("unknown method `{0}`")]
    UnknownMethod(String),

    #[error("output path already exists: {0}")]
    PathCollision(PathBuf),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 1 usage, 2 data error, 3 numerical error.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidParam { .. } | Error::UnknownMethod(_) | Error::FeatureMismatch { .. } => 1,
            Error::RankDeficient { .. }
            | Error::TooFewSamples { .. }
            | Error::NonFinite(_)
            | Error::DegenerateBox
            | Error::NoGroundTruthObjects => 3,
            _ => 2,
        }
    }
}
