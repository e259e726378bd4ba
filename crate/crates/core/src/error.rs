use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("instance id `{0}` is missing from one of the inputs")]
    MissingId(String),
    #[error("duplicate instance id `{0}`")]
    DuplicateId(String),
    #[error("line {line}: duplicate token `{token}`")]
    DuplicateToken { token: String, line: usize },
    #[error("line {line}: expected {expected} values, found {found}")]
    LengthMismatch {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: cell `{value}` is not 0 or 1")]
    NonBinary { line: usize, value: String },
    #[error("line {line}: ragged row, expected {expected} cells, found {found}")]
    RaggedRow {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("no word vector for any of the tokens {0:?}")]
    OutOfVocabulary(Vec<String>),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("vocabulary mismatch: {0}")]
    VocabularyMismatch(String),
    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("attribute `{0}` has no positive or no negative training instance")]
    DegenerateAttribute(String),
    #[error("attribute `{0}` has zero prevalence")]
    ZeroPrevalence(String),
    #[error("co-occurrence count must be non-negative, got {0}")]
    NegativeCount(f64),
    #[error("step size too large: objective {objective} exceeds 10x the initial {initial}")]
    Divergence { objective: f64, initial: f64 },
    #[error("singular system: {0}")]
    Singular(String),
    #[error("power set of {q} labels exceeds the limit of {max}")]
    PowerSetTooLarge { q: usize, max: usize },
    #[error("AUC undefined: labels need at least one positive and one negative")]
    UndefinedAuc,
    #[error("average precision undefined: no positive label")]
    UndefinedAp,
    #[error("unknown attribute `{0}`")]
    UnknownAttribute(String),
    #[error("invalid conditional matrix: {0}")]
    InvalidConditional(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("empty input: {0}")]
    Empty(&'static str),
    /// An error while reading the given file.
    #[error("{}: {source}", path.display())]
    InFile {
        path: PathBuf,
        #[source]
        source: Box<Error>,
    },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {source}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    /// Stable machine-readable code, used as the CLI error prefix.
    pub fn code(&self) -> &'static str {
        match self {
            Error::MissingId(_) => "E_MISSING_ID",
            Error::DuplicateId(_) => "E_DUPLICATE_ID",
            Error::DuplicateToken { .. } => "E_DUPLICATE_TOKEN",
            Error::LengthMismatch { .. } => "E_LENGTH",
            Error::Parse { .. } => "E_PARSE",
            Error::NonBinary { .. } => "E_NON_BINARY",
            Error::RaggedRow { .. } => "E_RAGGED",
            Error::OutOfVocabulary(_) => "E_OOV",
            Error::InvalidConfig(_) => "E_CONFIG",
            Error::VocabularyMismatch(_) => "E_VOCAB",
            Error::DimensionMismatch { .. } => "E_DIMENSION",
            Error::DegenerateAttribute(_) => "E_DEGENERATE",
            Error::ZeroPrevalence(_) => "E_ZERO_PREVALENCE",
            Error::NegativeCount(_) => "E_NEGATIVE_COUNT",
            Error::Divergence { .. } => "E_STEP_SIZE",
            Error::Singular(_) => "E_SINGULAR",
            Error::PowerSetTooLarge { .. } => "E_POWER_SET",
            Error::UndefinedAuc => "E_UNDEFINED_AUC",
            Error::UndefinedAp => "E_UNDEFINED_AP",
            Error::UnknownAttribute(_) => "E_UNKNOWN_ATTRIBUTE",
            Error::InvalidConditional(_) => "E_CONDITIONAL",
            Error::NonFinite(_) => "E_NON_FINITE",
            Error::Empty(_) => "E_EMPTY",
            Error::InFile { source, .. } => source.code(),
            Error::Io { .. } => "E_IO",
            Error::Json { .. } => "E_JSON",
        }
    }

    /// Attaches `path` unless the error already names a file.
    pub fn in_file(self, path: impl Into<PathBuf>) -> Self {
        match self {
            Error::InFile { .. } | Error::Io { .. } | Error::Json { .. } => self,
            other => Error::InFile {
                path: path.into(),
                source: Box::new(other),
            },
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }
}
