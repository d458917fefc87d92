use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("config error: {0}")]
    Config(String),

    #[error("header is missing declared domain `{0}`")]
    MissingDomain(String),

    #[error("no rows survived ingestion ({dropped} dropped for missing values)")]
    NoRows { dropped: usize },

    #[error("invalid schema: {0}")]
    InvalidSchema(String),

    #[error("label `{label}` is not in the vocabulary of domain `{domain}`")]
    OutOfVocabulary { domain: String, label: String },

    #[error("record does not match schema: {0}")]
    SchemaMismatch(String),

    #[error("schema hash mismatch: artifact `{artifact}` was built for {found}, expected {expected}")]
    SchemaHashMismatch {
        artifact: String,
        expected: String,
        found: String,
    },

    #[error("config digest mismatch for `{artifact}`: artifact is stale, rebuild it")]
    StaleArtifact { artifact: String },

    #[error("missing artifact {0}; run the producing command first")]
    MissingArtifact(PathBuf),

    #[error("malformed archive: {0}")]
    Archive(String),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unknown domain `{0}`")]
    UnknownDomain(String),

    #[error("no relation between domains `{0}` and `{1}`")]
    UnknownRelation(String, String),

    #[error("ground truth required for {0}")]
    MissingGroundTruth(&'static str),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
