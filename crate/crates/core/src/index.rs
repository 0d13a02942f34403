//! Dense embedding index with exact top-k search and the `.cme` cache format.
//!
//! # File layout (little-endian)
//!
//! ```text
//! magic       b"CMEB"
//! version     u32 = 1
//! dim         u32
//! count       u64
//! provider    u32 length + UTF-8 bytes
//! rows        count x [u32 id length | id UTF-8 | dim x f32]
//! crc32c      u32 over every preceding byte
//! ```

use std::cmp::Ordering;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{clamp_score, dot_f64, EmbeddingVector, SimilarityScore, UNIT_NORM_TOLERANCE};

pub const MAGIC: [u8; 4] = *b"CMEB";
pub const FORMAT_VERSION: u32 = 1;
pub const FILE_EXTENSION: &str = "cme";

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingIndex {
    dim: usize,
    ids: Vec<String>,
    matrix: Vec<f32>,
    provider_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub id: String,
    pub score: SimilarityScore,
}

/// Entries sorted by score descending, then id ascending.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RankedResult {
    pub entries: Vec<RankedEntry>,
}

impl RankedResult {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.id.as_str())
    }
}

/// Ranking order: higher score first, ties by smaller id.
pub fn rank_order(a_score: f64, a_id: &str, b_score: f64, b_id: &str) -> Ordering {
    b_score
        .partial_cmp(&a_score)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a_id.cmp(b_id))
}

impl EmbeddingIndex {
    /// Rows are stored in ascending id order whatever the input order.
    pub fn build(pairs: Vec<(String, EmbeddingVector)>, provider_id: impl Into<String>) -> Result<Self> {
        let Some(first) = pairs.first() else {
            return Err(Error::Empty);
        };
        let dim = first.1.dim();
        let mut pairs = pairs;
        pairs.sort_by(|a, b| a.0.cmp(&b.0));
        if let Some(w) = pairs.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(Error::DuplicateId(w[0].0.clone()));
        }
        let mut ids = Vec::with_capacity(pairs.len());
        let mut matrix = Vec::with_capacity(pairs.len() * dim);
        for (id, v) in pairs {
            if v.dim() != dim {
                return Err(Error::DimMismatch {
                    expected: dim,
                    got: v.dim(),
                });
            }
            if id.is_empty() {
                return Err(Error::InvalidArgument("empty id in index".into()));
            }
            ids.push(id);
            matrix.extend_from_slice(v.as_slice());
        }
        Ok(Self {
            dim,
            ids,
            matrix,
            provider_id: provider_id.into(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn provider_id(&self) -> &str {
        &self.provider_id
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.matrix[i * self.dim..(i + 1) * self.dim]
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.ids.binary_search_by(|x| x.as_str().cmp(id)).ok()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.position(id).is_some()
    }

    /// Exact top-k by dot product, see [`rank_order`] for ties.
    pub fn top_k(&self, query: &EmbeddingVector, k: usize) -> Result<RankedResult> {
        self.top_k_excluding(query, k, None)
    }

    /// [`top_k`](Self::top_k) with one id left out of the candidates.
    pub fn top_k_excluding(&self, query: &EmbeddingVector, k: usize, exclude: Option<&str>) -> Result<RankedResult> {
        if query.dim() != self.dim {
            return Err(Error::DimMismatch {
                expected: self.dim,
                got: query.dim(),
            });
        }
        if k == 0 {
            return Err(Error::InvalidArgument("k must be at least 1".into()));
        }
        let skip = exclude.and_then(|id| self.position(id));
        let q = query.as_slice();
        let mut scored: Vec<(f64, usize)> = (0..self.len())
            .filter(|&i| Some(i) != skip)
            .map(|i| (clamp_score(dot_f64(self.row(i), q)).value(), i))
            .collect();
        let cmp = |a: &(f64, usize), b: &(f64, usize)| rank_order(a.0, &self.ids[a.1], b.0, &self.ids[b.1]);
        let k = k.min(scored.len());
        if k == 0 {
            return Ok(RankedResult::default());
        }
        if k < scored.len() {
            scored.select_nth_unstable_by(k - 1, cmp);
            scored.truncate(k);
        }
        scored.sort_unstable_by(cmp);
        let entries = scored
            .into_iter()
            .map(|(s, i)| RankedEntry {
                id: self.ids[i].clone(),
                score: clamp_score(s),
            })
            .collect();
        Ok(RankedResult { entries })
    }
}

/// Serializes an index to `.cme` bytes.
pub fn encode_index(index: &EmbeddingIndex) -> Vec<u8> {
    let id_bytes: usize = index.ids.iter().map(|s| 4 + s.len()).sum();
    let mut out = Vec::with_capacity(28 + index.provider_id.len() + id_bytes + index.matrix.len() * 4);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(index.dim as u32).to_le_bytes());
    out.extend_from_slice(&(index.ids.len() as u64).to_le_bytes());
    out.extend_from_slice(&(index.provider_id.len() as u32).to_le_bytes());
    out.extend_from_slice(index.provider_id.as_bytes());
    for (i, id) in index.ids.iter().enumerate() {
        out.extend_from_slice(&(id.len() as u32).to_le_bytes());
        out.extend_from_slice(id.as_bytes());
        for v in index.row(i) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32c::crc32c(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let remaining = self.buf.len() - self.pos;
        if n > remaining {
            return Err(Error::Truncated {
                offset: self.pos,
                needed: n - remaining,
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let len = self.u32()? as usize;
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| Error::Corrupt(format!("{what} is not UTF-8")))
    }
}

/// Parses `.cme` bytes, verifying structure, checksum and row invariants.
pub fn decode_index(bytes: &[u8]) -> Result<EmbeddingIndex> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let magic: [u8; 4] = r.take(4)?.try_into().unwrap();
    if magic != MAGIC {
        return Err(Error::BadMagic(magic));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::VersionUnsupported(version));
    }
    let dim = r.u32()? as usize;
    let count = r.u64()?;
    let provider_id = r.string("provider id")?;
    if dim == 0 {
        return Err(Error::Corrupt("dim is zero".into()));
    }
    // each row needs at least 4 + 4*dim bytes; reject absurd counts before allocating
    let min_row = 4 + 4 * dim as u64;
    let remaining = (bytes.len() - r.pos) as u64;
    let min_body = count.saturating_mul(min_row);
    if min_body > remaining {
        return Err(Error::Truncated {
            offset: r.pos,
            needed: min_body.saturating_add(4).saturating_sub(remaining) as usize,
        });
    }
    let count = count as usize;
    let mut ids = Vec::with_capacity(count);
    let mut matrix = Vec::with_capacity(count * dim);
    for _ in 0..count {
        ids.push(r.string("id")?);
        let row = r.take(4 * dim)?;
        matrix.extend(row.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())));
    }
    let body_end = r.pos;
    let stored = r.u32()?;
    if r.pos != bytes.len() {
        return Err(Error::Corrupt(format!(
            "{} trailing byte(s) after checksum",
            bytes.len() - r.pos
        )));
    }
    let computed = crc32c::crc32c(&bytes[..body_end]);
    if stored != computed {
        return Err(Error::ChecksumMismatch { stored, computed });
    }
    if count == 0 {
        return Err(Error::Empty);
    }
    if let Some(w) = ids.windows(2).find(|w| w[0] >= w[1]) {
        return Err(Error::Corrupt(format!("ids not strictly sorted at {:?}", w[1])));
    }
    let index = EmbeddingIndex {
        dim,
        ids,
        matrix,
        provider_id,
    };
    for i in 0..index.len() {
        let row = index.row(i);
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::Corrupt(format!("row {} has non-finite values", index.ids[i])));
        }
        let norm = dot_f64(row, row).sqrt();
        if (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
            return Err(Error::Corrupt(format!("row {} has norm {norm}", index.ids[i])));
        }
    }
    Ok(index)
}

pub fn save_index(index: &EmbeddingIndex, path: &Path) -> Result<()> {
    fs::write(path, encode_index(index)).map_err(|e| Error::io(path, e))
}

pub fn load_index(path: &Path) -> Result<EmbeddingIndex> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_index(&bytes)
}

/// Conventional cache file name, `<domain>.<provider_id>.cme`, with path
/// separators in the provider id replaced.
pub fn index_file_name(domain: &str, provider_id: &str) -> String {
    format!("{}.{}.{FILE_EXTENSION}", sanitize(domain), sanitize(provider_id))
}

pub(crate) fn sanitize(s: &str) -> String {
    s.chars()
        .map(|c| {
            if c.is_alphanumeric() || matches!(c, '-' | '_' | '.') {
                c
            } else {
                '_'
            }
        })
        .collect()
}
