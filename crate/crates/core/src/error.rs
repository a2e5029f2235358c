use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("duplicate article id `{0}`")]
    DuplicateId(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("value {value} outside allowed range {range}")]
    OutOfRange { value: f64, range: &'static str },

    #[error("degenerate embedding `{0}`: zero vector")]
    ZeroVector(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("missing required aspect `{0}`")]
    MissingAspect(&'static str),

    #[error("undefined statistic: {0}")]
    Undefined(String),

    #[error("conflicting weights for edge ({a}, {b}): {w1} vs {w2}")]
    ConflictingEdge { a: String, b: String, w1: f64, w2: f64 },

    #[error("unknown article id `{0}`")]
    UnknownArticle(String),

    #[error("insufficient coverage for country `{0}`: no clustered articles")]
    InsufficientCoverage(String),

    #[error("no pairs available: {0}")]
    NoPairs(String),

    #[error("rank-deficient design; collinear columns: {}", .0.join(", "))]
    RankDeficient(Vec<String>),

    #[error("unseen category level `{0}`")]
    UnseenLevel(String),

    #[error("config error at `{key}`: {reason}")]
    Config { key: String, reason: String },

    #[error("missing upstream artifact {0}")]
    MissingArtifact(PathBuf),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
