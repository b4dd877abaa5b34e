use std::io;

/// Errors produced by the retrieval engine and its file formats.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },

    #[error("unsupported format version {found} (expected {expected})")]
    UnsupportedVersion { expected: u32, found: u32 },

    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("record {record}: file truncated")]
    Truncated { record: u64 },

    #[error("record {record}: duplicate term id {term}")]
    DuplicateTerm { record: u64, term: u32 },

    #[error("record {record}: term ids not increasing ({prev} then {term})")]
    NonMonotoneTerms { record: u64, prev: u32, term: u32 },

    #[error("record {record}: invalid weight {weight} for term {term}")]
    InvalidWeight { record: u64, term: u32, weight: f32 },

    #[error("record {record}: non-finite value")]
    NonFinite { record: u64 },

    #[error("record {record}: expected doc id {expected}, found {found}")]
    NonContiguousId {
        record: u64,
        expected: u64,
        found: u64,
    },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("config key `{key}`: {msg}")]
    Config { key: String, msg: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unknown {kind} id {id}")]
    UnknownId { kind: &'static str, id: u64 },

    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("incompatible components: {0}")]
    Incompatible(String),
}

impl Error {
    /// Stable snake_case name of the variant, for machine-readable reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Io(_) => "io",
            Self::BadMagic { .. } => "bad_magic",
            Self::UnsupportedVersion { .. } => "unsupported_version",
            Self::MalformedHeader(_) => "malformed_header",
            Self::Truncated { .. } => "truncated",
            Self::DuplicateTerm { .. } => "duplicate_term",
            Self::NonMonotoneTerms { .. } => "non_monotone_terms",
            Self::InvalidWeight { .. } => "invalid_weight",
            Self::NonFinite { .. } => "non_finite",
            Self::NonContiguousId { .. } => "non_contiguous_id",
            Self::DimensionMismatch { .. } => "dimension_mismatch",
            Self::Parse { .. } => "parse",
            Self::Config { .. } => "config",
            Self::InvalidArgument(_) => "invalid_argument",
            Self::UnknownId { .. } => "unknown_id",
            Self::Diverged { .. } => "diverged",
            Self::Incompatible(_) => "incompatible",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
