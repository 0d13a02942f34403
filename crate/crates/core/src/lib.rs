//! Cross-domain image retrieval by caption matching.
//!
//! Database images are captioned, the captions are embedded with a text
//! encoder, and a query image embedded with the paired image encoder is
//! ranked against them by dot product. The crate covers dataset ingest,
//! provider plumbing (a deterministic reference pair and an HTTP client),
//! the exact-search index and its caches, the retrieval pipeline, and the
//! evaluation protocol (P@k, mAP@All, domain-pair sweeps).

pub mod captions;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod hashing;
pub mod index;
pub mod providers;
pub mod retrieval;
pub mod types;

pub use error::{Error, Result};
pub use types::{
    dot_similarity, l2_normalize, l2_normalize_f32, CaptionRecord, CategoryId, DomainId, EmbeddingVector, ImageRecord,
    SimilarityScore,
};
