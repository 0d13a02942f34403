use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    // vectors
    #[error("vector norm is below 1e-12 and cannot be normalized")]
    ZeroVector,
    #[error("vector contains a non-finite entry at position {0}")]
    NonFinite(usize),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("vector is not unit-normalized (norm {0})")]
    NotNormalized(f64),

    // ingest
    #[error("path not found: {0}")]
    NotFound(PathBuf),
    #[error("no image files found under {0}")]
    EmptyDataset(PathBuf),
    #[error("malformed layout: {0}")]
    MalformedLayout(String),
    #[error("no category survives the filter (min_samples {0})")]
    EmptyResult(usize),

    // io and parsing
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error in {path} at line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    // providers
    #[error("empty token")]
    EmptyToken,
    #[error("text contains no alphanumeric tokens: {0:?}")]
    NoTokens(String),
    #[error("{0} is not UTF-8 text; the reference provider only reads synthetic text images")]
    UnsupportedBinary(PathBuf),
    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("service returned HTTP {status}: {body}")]
    Service { status: u16, body: String },
    #[error("expected {expected} results, service returned {got}")]
    CountMismatch { expected: usize, got: usize },
    #[error("service returned an empty caption for {0}")]
    EmptyCaption(String),
    #[error("item {index} of the batch failed: {source}")]
    AtIndex {
        index: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("embedding failed for image {image_id}: {source}")]
    ForImage {
        image_id: String,
        #[source]
        source: Box<Error>,
    },

    // index store
    #[error("duplicate id: {0}")]
    DuplicateId(String),
    #[error("cannot build an index from zero embeddings")]
    Empty,
    #[error("bad magic bytes {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported format version {0}")]
    VersionUnsupported(u32),
    #[error("file truncated: needed {needed} more byte(s) at offset {offset}")]
    Truncated { offset: usize, needed: usize },
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error("corrupt index: {0}")]
    Corrupt(String),

    // retrieval
    #[error("every captioning request failed ({0} image(s))")]
    AllFailed(usize),
    #[error("captioning failed for {} image(s): {}", .0.len(), .0.join(", "))]
    PartialFailure(Vec<String>),
    #[error("images without a category: {}", .0.join(", "))]
    MissingCategory(Vec<String>),

    // evaluation
    #[error("unknown image id: {0}")]
    UnknownId(String),
    #[error("image {0} has no category label")]
    Unlabeled(String),
    #[error("query has no relevant targets")]
    NoRelevant,
    #[error("no evaluable queries in domain {0}")]
    NoQueries(String),
    #[error("no targets in domain {0}")]
    NoTargets(String),
    #[error("no label for id {0}")]
    MissingLabel(String),
    #[error("pair {pair}: {source}")]
    Pair {
        pair: String,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Strips `AtIndex`/`ForImage`/`Pair` wrappers.
    pub fn root_cause(&self) -> &Error {
        match self {
            Error::AtIndex { source, .. } | Error::ForImage { source, .. } | Error::Pair { source, .. } => {
                source.root_cause()
            }
            other => other,
        }
    }
}
