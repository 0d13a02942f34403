//! Bit-deterministic, model-free providers for desk-scale runs.
//!
//! Every lowercase token maps to a pseudo-random unit direction seeded by
//! its FNV-1a hash; a text embeds as the normalized sum of its token
//! directions. Synthetic "images" are UTF-8 text files, so the image
//! embedder is the text embedder applied to file contents. The captioner
//! removes domain-name tokens, which is what makes captions land in the
//! same place regardless of the source domain.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hashing::{fnv1a64, SplitMix64};
use crate::providers::{Captioner, ImageEmbedder, TextEmbedder};
use crate::types::{l2_normalize, CaptionRecord, DomainId, EmbeddingVector, ImageRecord};

pub const REFERENCE_CAPTIONER_ID: &str = "reference";

/// Lowercases and splits on anything that is not alphanumeric.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_owned)
        .collect()
}

/// Unit direction for `token` in `f64`, before rounding.
fn token_direction(token: &str, dim: usize) -> Result<Vec<f64>> {
    if token.is_empty() {
        return Err(Error::EmptyToken);
    }
    if dim < 2 {
        return Err(Error::InvalidArgument(format!("reference dim must be >= 2, got {dim}")));
    }
    let mut rng = SplitMix64::new(fnv1a64(token.to_lowercase().as_bytes()));
    let raw: Vec<f64> = (0..dim).map(|_| rng.next_signed_unit()).collect();
    let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm < crate::types::MIN_NORM {
        return Err(Error::ZeroVector);
    }
    Ok(raw.into_iter().map(|x| x / norm).collect())
}

pub fn reference_token_vector(token: &str, dim: usize) -> Result<EmbeddingVector> {
    l2_normalize(&token_direction(token, dim)?)
}

pub fn reference_embed_text(text: &str, dim: usize) -> Result<EmbeddingVector> {
    let tokens = tokenize(text);
    if tokens.is_empty() {
        return Err(Error::NoTokens(text.to_string()));
    }
    let mut sum = vec![0.0f64; dim];
    for token in &tokens {
        for (acc, x) in sum.iter_mut().zip(token_direction(token, dim)?) {
            *acc += x;
        }
    }
    l2_normalize(&sum)
}

fn read_text(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    String::from_utf8(bytes).map_err(|_| Error::UnsupportedBinary(path.to_path_buf()))
}

pub fn reference_embed_image(record: &ImageRecord, dim: usize) -> Result<EmbeddingVector> {
    reference_embed_text(&read_text(&record.path)?, dim)
}

pub fn reference_caption(record: &ImageRecord, known_domains: &BTreeSet<DomainId>) -> Result<CaptionRecord> {
    let contents = read_text(&record.path)?;
    let kept: Vec<String> = tokenize(&contents)
        .into_iter()
        .filter(|t| !known_domains.iter().any(|d| d.as_str() == t))
        .collect();
    if kept.is_empty() {
        return Err(Error::NoTokens(contents));
    }
    CaptionRecord::new(record.id.clone(), kept.join(" "), REFERENCE_CAPTIONER_ID)
}

/// Reference text and image embedder sharing one space.
#[derive(Debug, Clone)]
pub struct ReferenceEmbedder {
    dim: usize,
    provider_id: String,
}

impl ReferenceEmbedder {
    pub fn new(dim: usize) -> Result<Self> {
        if dim < 2 {
            return Err(Error::InvalidArgument(format!("reference dim must be >= 2, got {dim}")));
        }
        Ok(Self {
            dim,
            provider_id: format!("reference-d{dim}"),
        })
    }
}

impl TextEmbedder for ReferenceEmbedder {
    fn provider_id(&self) -> &str {
        &self.provider_id
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_texts(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
        texts
            .par_iter()
            .enumerate()
            .map(|(index, t)| {
                reference_embed_text(t, self.dim).map_err(|e| Error::AtIndex {
                    index,
                    source: Box::new(e),
                })
            })
            .collect()
    }
}

impl ImageEmbedder for ReferenceEmbedder {
    fn provider_id(&self) -> &str {
        &self.provider_id
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_images(&self, records: &[ImageRecord]) -> Result<Vec<EmbeddingVector>> {
        records
            .par_iter()
            .enumerate()
            .map(|(index, r)| {
                reference_embed_image(r, self.dim).map_err(|e| Error::AtIndex {
                    index,
                    source: Box::new(e),
                })
            })
            .collect()
    }
}

/// Captions by stripping the tokens of every known domain name.
#[derive(Debug, Clone)]
pub struct ReferenceCaptioner {
    known_domains: BTreeSet<DomainId>,
}

impl ReferenceCaptioner {
    pub fn new(known_domains: BTreeSet<DomainId>) -> Self {
        Self { known_domains }
    }
}

impl Captioner for ReferenceCaptioner {
    fn provider_id(&self) -> &str {
        REFERENCE_CAPTIONER_ID
    }

    fn caption(&self, record: &ImageRecord) -> Result<CaptionRecord> {
        reference_caption(record, &self.known_domains)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::dot_similarity;
    use proptest::prelude::*;
    use tempfile::TempDir;

    fn domains(names: &[&str]) -> BTreeSet<DomainId> {
        names.iter().map(|n| DomainId::new(n).unwrap()).collect()
    }

    fn text_record(dir: &Path, name: &str, contents: &[u8]) -> ImageRecord {
        let path = dir.join(name);
        fs::write(&path, contents).unwrap();
        ImageRecord::new(name, path, DomainId::new("d0").unwrap(), None).unwrap()
    }

    #[test]
    fn tokenizer_splits_and_lowercases() {
        assert_eq!(tokenize("A photo-of a Dog!"), ["a", "photo", "of", "a", "dog"]);
        assert!(tokenize(" ,;- ").is_empty());
    }

    #[test]
    fn token_vectors_are_deterministic_and_case_blind() {
        let a = reference_token_vector("tiger", 64).unwrap();
        let b = reference_token_vector("tiger", 64).unwrap();
        let c = reference_token_vector("Tiger", 64).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, c);
        assert!((a.norm() - 1.0).abs() < 1e-6);
        assert!(matches!(reference_token_vector("", 64), Err(Error::EmptyToken)));
        assert!(reference_token_vector("x", 1).is_err());
    }

    #[test]
    fn single_token_text_equals_token_vector() {
        for t in ["tiger", "dog", "c1", "mod7"] {
            assert_eq!(
                reference_embed_text(t, 64).unwrap(),
                reference_token_vector(t, 64).unwrap()
            );
        }
        // multiplicity only scales the sum by two
        assert_eq!(
            reference_embed_text("tiger tiger", 64).unwrap(),
            reference_embed_text("tiger", 64).unwrap()
        );
    }

    #[test]
    fn embed_text_without_tokens() {
        assert!(matches!(reference_embed_text("!!", 64), Err(Error::NoTokens(_))));
    }

    #[test]
    fn shared_token_pulls_texts_together() {
        let st = reference_embed_text("sketch tiger", 64).unwrap();
        let tiger = reference_embed_text("tiger", 64).unwrap();
        let dog = reference_embed_text("dog", 64).unwrap();
        let with_tiger = dot_similarity(&st, &tiger).unwrap().value();
        let with_dog = dot_similarity(&st, &dog).unwrap().value();
        assert!(with_tiger > with_dog, "{with_tiger} vs {with_dog}");
    }

    #[test]
    fn image_embedding_reads_text_files() {
        let tmp = TempDir::new().unwrap();
        let r1 = text_record(tmp.path(), "a.txt", b"d0 c1 mod7");
        let r2 = text_record(tmp.path(), "b.txt", b"d0 c1 mod7");
        let jpeg = text_record(tmp.path(), "c.jpg", &[0xFF, 0xD8, 0xFF, 0xE0, 0x00, 0x10, 0x80]);
        let e1 = reference_embed_image(&r1, 64).unwrap();
        assert_eq!(e1, reference_embed_text("d0 c1 mod7", 64).unwrap());
        assert_eq!(e1, reference_embed_image(&r2, 64).unwrap());
        assert!(matches!(
            reference_embed_image(&jpeg, 64),
            Err(Error::UnsupportedBinary(_))
        ));
        let missing = ImageRecord::new("m", tmp.path().join("nope"), DomainId::new("d").unwrap(), None).unwrap();
        assert!(matches!(reference_embed_image(&missing, 64), Err(Error::Io { .. })));
    }

    #[test]
    fn caption_strips_domain_tokens() {
        let tmp = TempDir::new().unwrap();
        let ds = domains(&["d0", "d1"]);
        let r = text_record(tmp.path(), "a.txt", b"d0 c1 mod7");
        assert_eq!(reference_caption(&r, &ds).unwrap().caption, "c1 mod7");
        let r = text_record(tmp.path(), "b.txt", b"c1 mod7");
        assert_eq!(reference_caption(&r, &ds).unwrap().caption, "c1 mod7");
        let r = text_record(tmp.path(), "c.txt", b"d0 d1");
        assert!(matches!(reference_caption(&r, &ds), Err(Error::NoTokens(_))));
    }

    #[test]
    fn batch_errors_carry_index() {
        let e = ReferenceEmbedder::new(16).unwrap();
        let err = e.embed_texts(&["ok".into(), "--".into()]).unwrap_err();
        assert!(matches!(err, Error::AtIndex { index: 1, .. }));
    }

    proptest! {
        #[test]
        fn captions_never_contain_domain_tokens(
            words in prop::collection::vec(prop::sample::select(vec!["d0", "d1", "D2", "c0", "c1", "mod3", "x"]), 1..8)
        ) {
            let tmp = TempDir::new().unwrap();
            let ds = domains(&["d0", "d1", "d2"]);
            let r = text_record(tmp.path(), "a.txt", words.join(" ").as_bytes());
            if let Ok(c) = reference_caption(&r, &ds) {
                for t in tokenize(&c.caption) {
                    prop_assert!(!ds.iter().any(|d| d.as_str() == t));
                }
            }
        }

        #[test]
        fn embeddings_are_unit(text in "[a-z0-9 ]{1,40}", dim in 2usize..128) {
            prop_assume!(!tokenize(&text).is_empty());
            let v = reference_embed_text(&text, dim).unwrap();
            prop_assert_eq!(v.dim(), dim);
            prop_assert!((v.norm() - 1.0).abs() <= 1e-5);
        }
    }
}
