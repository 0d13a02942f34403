//! Core value types and the normalization/similarity primitives.
//!
//! Every embedding in the engine is stored as 32-bit floats with unit L2
//! norm, so the dot product of two embeddings is their cosine similarity.
//! Reductions accumulate in `f64` in ascending index order, which keeps
//! results reproducible across platforms and thread counts.

use std::fmt;
use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on `| ||v|| - 1 |` for a vector to count as unit-normalized.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-5;

/// Vectors whose norm falls below this cannot be normalized.
pub const MIN_NORM: f64 = 1e-12;

macro_rules! lowercase_name {
    ($(#[$meta:meta])* $name:ident, $what:literal) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(try_from = "String", into = "String")]
        pub struct $name(String);

        impl $name {
            /// Lowercases `name`; fails on an empty (or all-whitespace) name.
            pub fn new(name: impl AsRef<str>) -> Result<Self> {
                let name = name.as_ref().trim();
                if name.is_empty() {
                    return Err(Error::InvalidArgument(concat!($what, " name is empty").into()));
                }
                Ok(Self(name.to_lowercase()))
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl TryFrom<String> for $name {
            type Error = Error;
            fn try_from(s: String) -> Result<Self> {
                Self::new(s)
            }
        }

        impl From<$name> for String {
            fn from(v: $name) -> String {
                v.0
            }
        }
    };
}

lowercase_name!(
    /// A visual domain such as `clipart` or `sketch`.
    DomainId,
    "domain"
);
lowercase_name!(
    /// An object category; retrieval is judged correct when categories match.
    CategoryId,
    "category"
);

/// One database or query image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageRecord {
    pub id: String,
    pub path: PathBuf,
    pub domain: DomainId,
    /// `None` for unlabeled databases.
    pub category: Option<CategoryId>,
}

impl ImageRecord {
    pub fn new(
        id: impl Into<String>,
        path: impl Into<PathBuf>,
        domain: DomainId,
        category: Option<CategoryId>,
    ) -> Result<Self> {
        let id = id.into();
        if id.is_empty() {
            return Err(Error::InvalidArgument("image id is empty".into()));
        }
        Ok(Self {
            id,
            path: path.into(),
            domain,
            category,
        })
    }
}

/// Generated (or oracle) caption text for one image.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CaptionRecord {
    pub image_id: String,
    pub caption: String,
    pub provider_id: String,
}

impl CaptionRecord {
    pub fn new(
        image_id: impl Into<String>,
        caption: impl Into<String>,
        provider_id: impl Into<String>,
    ) -> Result<Self> {
        let rec = Self {
            image_id: image_id.into(),
            caption: caption.into(),
            provider_id: provider_id.into(),
        };
        rec.validate()?;
        Ok(rec)
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if self.image_id.is_empty() {
            return Err(Error::InvalidArgument("caption record has empty image_id".into()));
        }
        if self.caption.trim().is_empty() {
            return Err(Error::InvalidArgument(format!(
                "caption for {} is empty",
                self.image_id
            )));
        }
        Ok(())
    }
}

/// Unit-normalized embedding. Cheap to clone; immutable once built.
#[derive(Clone, PartialEq)]
pub struct EmbeddingVector(Arc<[f32]>);

impl EmbeddingVector {
    /// Wraps values that are already unit-normalized, checking the invariant.
    pub fn from_unit(values: Vec<f32>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::ZeroVector);
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        let norm = norm_f64(values.iter().map(|&v| v as f64));
        if (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
            return Err(Error::NotNormalized(norm));
        }
        Ok(Self(values.into()))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        norm_f64(self.0.iter().map(|&v| v as f64))
    }
}

impl fmt::Debug for EmbeddingVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "EmbeddingVector(dim={}, {:?})",
            self.dim(),
            &self.0[..self.dim().min(4)]
        )
    }
}

/// Dot product of two unit vectors, clamped to `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct SimilarityScore(f64);

impl SimilarityScore {
    pub fn value(self) -> f64 {
        self.0
    }
}

impl fmt::Display for SimilarityScore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.6}", self.0)
    }
}

fn norm_f64(values: impl Iterator<Item = f64>) -> f64 {
    values.map(|v| v * v).sum::<f64>().sqrt()
}

/// Scales `v` to unit L2 norm and rounds to `f32`.
pub fn l2_normalize(v: &[f64]) -> Result<EmbeddingVector> {
    if v.is_empty() {
        return Err(Error::ZeroVector);
    }
    if let Some(i) = v.iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFinite(i));
    }
    let norm = norm_f64(v.iter().copied());
    if !norm.is_finite() {
        return Err(Error::NonFinite(0));
    }
    if norm < MIN_NORM {
        return Err(Error::ZeroVector);
    }
    Ok(EmbeddingVector(
        v.iter().map(|&x| (x / norm) as f32).collect::<Vec<_>>().into(),
    ))
}

/// [`l2_normalize`] for single-precision input (widened exactly to `f64`).
pub fn l2_normalize_f32(v: &[f32]) -> Result<EmbeddingVector> {
    let wide: Vec<f64> = v.iter().map(|&x| x as f64).collect();
    l2_normalize(&wide)
}

/// Raw dot product of equal-length slices, `f64` accumulation in index order.
#[inline]
pub(crate) fn dot_f64(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0f64;
    for i in 0..a.len() {
        acc += a[i] as f64 * b[i] as f64;
    }
    acc
}

#[inline]
pub(crate) fn clamp_score(raw: f64) -> SimilarityScore {
    SimilarityScore(raw.clamp(-1.0, 1.0))
}

pub fn dot_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<SimilarityScore> {
    if a.dim() != b.dim() {
        return Err(Error::DimMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    Ok(clamp_score(dot_f64(a.as_slice(), b.as_slice())))
}
