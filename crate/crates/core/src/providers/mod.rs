//! Caption and embedding providers.
//!
//! The engine talks to three roles: a [`Captioner`] that turns an image into
//! text, a [`TextEmbedder`] for captions and an [`ImageEmbedder`] for query
//! images. Both embedders must share one embedding space (same `dim`).
//! [`reference`] holds a hash-based implementation that needs no model;
//! [`remote`] speaks to the HTTP inference service.

pub mod reference;
pub mod remote;

use crate::error::{Error, Result};
use crate::types::{CaptionRecord, EmbeddingVector, ImageRecord, UNIT_NORM_TOLERANCE};

pub use reference::{ReferenceCaptioner, ReferenceEmbedder};
pub use remote::{RemoteClient, RemoteEndpoint, ServiceInfo};

pub trait TextEmbedder: Send + Sync {
    fn provider_id(&self) -> &str;
    fn dim(&self) -> usize;
    /// One vector per text, in input order. Failures tied to one input are
    /// reported as [`Error::AtIndex`].
    fn embed_texts(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>>;
}

pub trait ImageEmbedder: Send + Sync {
    fn provider_id(&self) -> &str;
    fn dim(&self) -> usize;
    fn embed_images(&self, records: &[ImageRecord]) -> Result<Vec<EmbeddingVector>>;
}

pub trait Captioner: Send + Sync {
    fn provider_id(&self) -> &str;
    fn caption(&self, record: &ImageRecord) -> Result<CaptionRecord>;
}

/// Boundary check applied to every provider response.
pub fn check_embeddings(vectors: &[EmbeddingVector], expected: usize, dim: usize) -> Result<()> {
    if vectors.len() != expected {
        return Err(Error::CountMismatch {
            expected,
            got: vectors.len(),
        });
    }
    for (index, v) in vectors.iter().enumerate() {
        if v.dim() != dim {
            return Err(Error::AtIndex {
                index,
                source: Box::new(Error::DimMismatch {
                    expected: dim,
                    got: v.dim(),
                }),
            });
        }
        let norm = v.norm();
        if (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
            return Err(Error::AtIndex {
                index,
                source: Box::new(Error::NotNormalized(norm)),
            });
        }
    }
    Ok(())
}
