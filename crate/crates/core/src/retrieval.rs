//! The caption-matching pipeline: caption the target database, embed the
//! captions as text, embed the query as an image, rank by dot product.
//! Oracle mode swaps generated captions for the ground-truth class label.

use log::warn;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::index::{EmbeddingIndex, RankedResult};
use crate::providers::{check_embeddings, Captioner, ImageEmbedder, TextEmbedder};
use crate::types::{CaptionRecord, EmbeddingVector, ImageRecord};

pub const CLASS_PLACEHOLDER: &str = "{class}";
pub const ORACLE_PROVIDER_ID: &str = "oracle";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RetrievalMode {
    #[default]
    Caption,
    Oracle,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RetrievalConfig {
    pub k: usize,
    pub mode: RetrievalMode,
    pub oracle_template: String,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            k: 10,
            mode: RetrievalMode::Caption,
            oracle_template: CLASS_PLACEHOLDER.to_string(),
        }
    }
}

impl RetrievalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidArgument("k must be at least 1".into()));
        }
        if self.mode == RetrievalMode::Oracle && !self.oracle_template.contains(CLASS_PLACEHOLDER) {
            return Err(Error::InvalidArgument(format!(
                "oracle template {:?} lacks the {CLASS_PLACEHOLDER} placeholder",
                self.oracle_template
            )));
        }
        Ok(())
    }
}

/// Result of a captioning pass. Failed images are listed, not dropped silently.
#[derive(Debug, Default)]
pub struct CaptionBatch {
    pub records: Vec<CaptionRecord>,
    pub failures: Vec<(String, Error)>,
}

impl CaptionBatch {
    pub fn failed_ids(&self) -> Vec<String> {
        self.failures.iter().map(|(id, _)| id.clone()).collect()
    }

    /// `PartialFailure` if any image failed.
    pub fn check(&self) -> Result<()> {
        if self.failures.is_empty() {
            Ok(())
        } else {
            Err(Error::PartialFailure(self.failed_ids()))
        }
    }
}

/// Captions every target, continuing past individual failures.
///
/// Fails with `AllFailed` when nothing could be captioned (including an empty
/// target list); otherwise returns all successes and the failures, id-ordered.
pub fn caption_database(targets: &[ImageRecord], captioner: &dyn Captioner) -> Result<CaptionBatch> {
    if targets.is_empty() {
        return Err(Error::AllFailed(0));
    }
    let results: Vec<(String, Result<CaptionRecord>)> = targets
        .par_iter()
        .map(|r| (r.id.clone(), captioner.caption(r)))
        .collect();
    let mut batch = CaptionBatch::default();
    for (id, res) in results {
        match res {
            Ok(rec) => batch.records.push(rec),
            Err(e) => {
                warn!("captioning {id} failed: {e}");
                batch.failures.push((id, e));
            }
        }
    }
    if batch.records.is_empty() {
        return Err(Error::AllFailed(targets.len()));
    }
    batch.records.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    batch.failures.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(batch)
}

/// Captions taken straight from category labels.
pub fn oracle_captions(targets: &[ImageRecord], template: &str) -> Result<Vec<CaptionRecord>> {
    if !template.contains(CLASS_PLACEHOLDER) {
        return Err(Error::InvalidArgument(format!(
            "oracle template {template:?} lacks the {CLASS_PLACEHOLDER} placeholder"
        )));
    }
    let missing: Vec<String> = targets
        .iter()
        .filter(|r| r.category.is_none())
        .map(|r| r.id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingCategory(missing));
    }
    let mut out = targets
        .iter()
        .map(|r| {
            let class = r.category.as_ref().expect("checked above");
            CaptionRecord::new(
                r.id.clone(),
                template.replace(CLASS_PLACEHOLDER, class.as_str()),
                ORACLE_PROVIDER_ID,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    out.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    Ok(out)
}

pub fn embed_captions(records: &[CaptionRecord], embedder: &dyn TextEmbedder) -> Result<EmbeddingIndex> {
    if records.is_empty() {
        return Err(Error::Empty);
    }
    let mut ids: Vec<&str> = records.iter().map(|r| r.image_id.as_str()).collect();
    ids.sort_unstable();
    if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::DuplicateId(w[0].to_string()));
    }
    let texts: Vec<String> = records.iter().map(|r| r.caption.clone()).collect();
    let vectors = embedder
        .embed_texts(&texts)
        .and_then(|v| check_embeddings(&v, records.len(), embedder.dim()).map(|_| v))
        .map_err(|e| attach_image_id(e, |i| records[i].image_id.as_str()))?;
    let pairs = records.iter().map(|r| r.image_id.clone()).zip(vectors).collect();
    EmbeddingIndex::build(pairs, embedder.provider_id())
}

fn attach_image_id<'a>(e: Error, id_at: impl Fn(usize) -> &'a str) -> Error {
    match e {
        Error::AtIndex { index, source } => Error::ForImage {
            image_id: id_at(index).to_string(),
            source,
        },
        other => other,
    }
}

/// Embeds images, attaching the image id to per-item failures.
pub fn embed_query_images(records: &[ImageRecord], embedder: &dyn ImageEmbedder) -> Result<Vec<EmbeddingVector>> {
    let vectors = embedder
        .embed_images(records)
        .and_then(|v| check_embeddings(&v, records.len(), embedder.dim()).map(|_| v))
        .map_err(|e| attach_image_id(e, |i| records[i].id.as_str()))?;
    Ok(vectors)
}

/// Ranks the index against an already-embedded query. The query's own id is
/// excluded when present, so same-domain runs never return the query itself.
pub fn rank(query_id: &str, query: &EmbeddingVector, index: &EmbeddingIndex, k: usize) -> Result<RankedResult> {
    index.top_k_excluding(query, k, Some(query_id))
}

pub fn query(
    query_image: &ImageRecord,
    index: &EmbeddingIndex,
    image_embedder: &dyn ImageEmbedder,
    cfg: &RetrievalConfig,
) -> Result<RankedResult> {
    cfg.validate()?;
    if image_embedder.dim() != index.dim() {
        return Err(Error::DimMismatch {
            expected: index.dim(),
            got: image_embedder.dim(),
        });
    }
    if image_embedder.provider_id() != index.provider_id() {
        warn!(
            "query embedder {} differs from index provider {}",
            image_embedder.provider_id(),
            index.provider_id()
        );
    }
    let v = embed_query_images(std::slice::from_ref(query_image), image_embedder)?
        .pop()
        .expect("one vector per image");
    rank(&query_image.id, &v, index, cfg.k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::providers::reference::{reference_embed_text, ReferenceCaptioner, ReferenceEmbedder};
    use crate::types::{dot_similarity, CategoryId, DomainId};
    use std::collections::BTreeSet;
    use std::fs;
    use std::path::Path;
    use tempfile::TempDir;

    fn write_image(dir: &Path, id: &str, domain: &str, cat: Option<&str>, text: &str) -> ImageRecord {
        let path = dir.join(id.replace('/', "_"));
        fs::write(&path, text).unwrap();
        ImageRecord::new(
            id,
            path,
            DomainId::new(domain).unwrap(),
            cat.map(|c| CategoryId::new(c).unwrap()),
        )
        .unwrap()
    }

    fn domains() -> BTreeSet<DomainId> {
        ["d0", "d1"].iter().map(|d| DomainId::new(d).unwrap()).collect()
    }

    #[test]
    fn caption_database_strips_domains_and_sorts() {
        let tmp = TempDir::new().unwrap();
        let targets: Vec<_> = [
            ("d1/c1/b", "d1 c1 mod2"),
            ("d1/c0/a", "d1 c0 mod1"),
            ("d1/c0/c", "d1 c0 mod3"),
            ("d1/c1/d", "d1 c1 mod4"),
        ]
        .iter()
        .map(|(id, t)| write_image(tmp.path(), id, "d1", None, t))
        .collect();
        let batch = caption_database(&targets, &ReferenceCaptioner::new(domains())).unwrap();
        assert!(batch.failures.is_empty());
        let got: Vec<_> = batch
            .records
            .iter()
            .map(|r| (r.image_id.as_str(), r.caption.as_str()))
            .collect();
        assert_eq!(
            got,
            [
                ("d1/c0/a", "c0 mod1"),
                ("d1/c0/c", "c0 mod3"),
                ("d1/c1/b", "c1 mod2"),
                ("d1/c1/d", "c1 mod4")
            ]
        );
    }

    #[test]
    fn caption_database_collects_failures() {
        let tmp = TempDir::new().unwrap();
        let mut targets: Vec<_> = (0..9)
            .map(|i| write_image(tmp.path(), &format!("d1/c0/{i}"), "d1", None, "d1 c0 x"))
            .collect();
        targets.push(
            ImageRecord::new(
                "d1/c0/bad",
                tmp.path().join("missing"),
                DomainId::new("d1").unwrap(),
                None,
            )
            .unwrap(),
        );
        let batch = caption_database(&targets, &ReferenceCaptioner::new(domains())).unwrap();
        assert_eq!(batch.records.len(), 9);
        assert_eq!(batch.failed_ids(), ["d1/c0/bad"]);
        assert!(matches!(batch.check(), Err(Error::PartialFailure(ids)) if ids == ["d1/c0/bad"]));

        assert!(matches!(
            caption_database(&[], &ReferenceCaptioner::new(domains())),
            Err(Error::AllFailed(0))
        ));
        let bad = &targets[9..];
        assert!(matches!(
            caption_database(bad, &ReferenceCaptioner::new(domains())),
            Err(Error::AllFailed(1))
        ));
    }

    #[test]
    fn oracle_substitution() {
        let tmp = TempDir::new().unwrap();
        let t = vec![write_image(tmp.path(), "d1/bike/1", "d1", Some("bike"), "x")];
        assert_eq!(oracle_captions(&t, "{class}").unwrap()[0].caption, "bike");
        let c = oracle_captions(&t, "a photo of a {class}").unwrap();
        assert_eq!(c[0].caption, "a photo of a bike");
        assert_eq!(c[0].provider_id, ORACLE_PROVIDER_ID);
        assert!(oracle_captions(&t, "no placeholder").is_err());

        let unlabeled = vec![write_image(tmp.path(), "d1/x/2", "d1", None, "x")];
        assert!(
            matches!(oracle_captions(&unlabeled, "{class}"), Err(Error::MissingCategory(ids)) if ids == ["d1/x/2"])
        );
    }

    #[test]
    fn embed_captions_composes_reference() {
        let e = ReferenceEmbedder::new(32).unwrap();
        let recs = vec![
            CaptionRecord::new("b", "c1 mod2", "reference").unwrap(),
            CaptionRecord::new("a", "c0 mod1", "reference").unwrap(),
            CaptionRecord::new("c", "tiger", "reference").unwrap(),
        ];
        let idx = embed_captions(&recs, &e).unwrap();
        assert_eq!(idx.len(), 3);
        assert_eq!(idx.provider_id(), "reference-d32");
        assert_eq!(idx.row(0), reference_embed_text("c0 mod1", 32).unwrap().as_slice());
        assert_eq!(idx.row(2), reference_embed_text("tiger", 32).unwrap().as_slice());

        let dup = vec![recs[0].clone(), recs[0].clone()];
        assert!(matches!(embed_captions(&dup, &e), Err(Error::DuplicateId(_))));
    }

    #[test]
    fn embed_captions_names_failing_image() {
        let e = ReferenceEmbedder::new(32).unwrap();
        let recs = vec![
            CaptionRecord::new("a", "fine", "p").unwrap(),
            CaptionRecord::new("b", "??", "p").unwrap(),
        ];
        match embed_captions(&recs, &e) {
            Err(Error::ForImage { image_id, .. }) => assert_eq!(image_id, "b"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn query_ranks_matching_category_first() {
        let tmp = TempDir::new().unwrap();
        let e = ReferenceEmbedder::new(64).unwrap();
        let recs = vec![
            CaptionRecord::new("d1/c1/0", "c1 mod5", "reference").unwrap(),
            CaptionRecord::new("d1/c0/0", "c0 mod9", "reference").unwrap(),
        ];
        let idx = embed_captions(&recs, &e).unwrap();
        let q = write_image(tmp.path(), "d0/c1/q", "d0", Some("c1"), "d0 c1 mod3");

        // oracle: compute both similarities directly
        let qv = reference_embed_text("d0 c1 mod3", 64).unwrap();
        let s1 = dot_similarity(&qv, &reference_embed_text("c1 mod5", 64).unwrap()).unwrap();
        let s0 = dot_similarity(&qv, &reference_embed_text("c0 mod9", 64).unwrap()).unwrap();
        assert!(s1 > s0);

        let cfg = RetrievalConfig {
            k: 1,
            ..Default::default()
        };
        let r = query(&q, &idx, &e, &cfg).unwrap();
        assert_eq!(r.entries[0].id, "d1/c1/0");
        assert_eq!(r.entries[0].score, s1);

        let cfg = RetrievalConfig {
            k: 50,
            ..Default::default()
        };
        assert_eq!(query(&q, &idx, &e, &cfg).unwrap().len(), 2);
    }

    #[test]
    fn query_excludes_itself() {
        let tmp = TempDir::new().unwrap();
        let e = ReferenceEmbedder::new(64).unwrap();
        let q = write_image(tmp.path(), "d0/c1/q", "d0", Some("c1"), "c1 mod3");
        let recs = vec![
            CaptionRecord::new("d0/c1/q", "c1 mod3", "reference").unwrap(),
            CaptionRecord::new("d0/c1/r", "c1 mod4", "reference").unwrap(),
        ];
        let idx = embed_captions(&recs, &e).unwrap();
        let r = query(&q, &idx, &e, &RetrievalConfig::default()).unwrap();
        assert_eq!(r.ids().collect::<Vec<_>>(), ["d0/c1/r"]);
    }

    #[test]
    fn query_dim_mismatch() {
        let tmp = TempDir::new().unwrap();
        let recs = vec![CaptionRecord::new("a", "x", "p").unwrap()];
        let idx = embed_captions(&recs, &ReferenceEmbedder::new(16).unwrap()).unwrap();
        let q = write_image(tmp.path(), "q", "d0", None, "x");
        let err = query(
            &q,
            &idx,
            &ReferenceEmbedder::new(32).unwrap(),
            &RetrievalConfig::default(),
        );
        assert!(matches!(err, Err(Error::DimMismatch { expected: 16, got: 32 })));
    }

    #[test]
    fn config_validation() {
        assert!(RetrievalConfig::default().validate().is_ok());
        let bad = RetrievalConfig {
            k: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = RetrievalConfig {
            mode: RetrievalMode::Oracle,
            oracle_template: "photo".into(),
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
