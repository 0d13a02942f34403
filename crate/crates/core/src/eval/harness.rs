//! Pair evaluation and sweeps.
//!
//! For every pair the (optionally filtered) query and target sets are
//! resolved first. Each target domain is then captioned and embedded once,
//! as is each query domain, and pairs rank against a per-pair subset of the
//! target index. With a cache directory, captions and embeddings persist
//! between runs and only missing images are processed.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::PathBuf;

use log::{info, warn};
use rayon::prelude::*;

use crate::captions::{load_captions, save_captions};
use crate::dataset::{filter_categories, CategoryFilter, FilterScope, Manifest};
use crate::error::{Error, Result};
use crate::eval::metrics::{average_precision, precision_at_k, Metric};
use crate::eval::pairs::DomainPair;
use crate::eval::report::{EvalReport, PairMetrics};
use crate::index::{index_file_name, load_index, sanitize, save_index, EmbeddingIndex};
use crate::providers::{Captioner, ImageEmbedder, TextEmbedder};
use crate::retrieval::{
    caption_database, embed_captions, embed_query_images, oracle_captions, rank, RetrievalConfig, RetrievalMode,
};
use crate::types::{CaptionRecord, CategoryId, DomainId, EmbeddingVector, ImageRecord};

/// The three provider roles. `captioner` is unused in oracle mode.
#[derive(Clone, Copy)]
pub struct Providers<'a> {
    pub captioner: &'a dyn Captioner,
    pub text: &'a dyn TextEmbedder,
    pub image: &'a dyn ImageEmbedder,
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub retrieval: RetrievalConfig,
    pub metrics: Vec<Metric>,
    pub filter: Option<CategoryFilter>,
    pub allow_same_domain: bool,
    pub cache_dir: Option<PathBuf>,
}

impl EvalOptions {
    pub fn new(metrics: Vec<Metric>) -> Self {
        Self {
            retrieval: RetrievalConfig::default(),
            metrics,
            filter: None,
            allow_same_domain: false,
            cache_dir: None,
        }
    }

    fn mode_label(&self) -> &'static str {
        match self.retrieval.mode {
            RetrievalMode::Caption => "caption",
            RetrievalMode::Oracle => "oracle",
        }
    }
}

struct PairPlan {
    pair: DomainPair,
    queries: Vec<ImageRecord>,
    target_ids: BTreeSet<String>,
}

fn plan_pair(manifest: &Manifest, pair: &DomainPair, options: &EvalOptions) -> Result<PairPlan> {
    if !options.allow_same_domain && pair.is_same_domain() {
        return Err(Error::InvalidArgument(format!("same-domain pair {pair} not enabled")));
    }
    for d in [&pair.query_domain, &pair.target_domain] {
        if !manifest.domains().contains(d) {
            return Err(Error::InvalidArgument(format!("domain {d} not in manifest")));
        }
    }
    let scoped = match options.filter {
        Some(f) if f.scope == FilterScope::PerDomain => {
            let sub = manifest.restrict_to_domains(&[&pair.query_domain, &pair.target_domain]);
            filter_categories(&sub, &f)?
        }
        _ => manifest.clone(),
    };
    let queries: Vec<ImageRecord> = scoped
        .images_in(&pair.query_domain)
        .filter(|r| r.category.is_some())
        .cloned()
        .collect();
    let target_ids: BTreeSet<String> = scoped.images_in(&pair.target_domain).map(|r| r.id.clone()).collect();
    if queries.is_empty() {
        return Err(Error::NoQueries(pair.query_domain.to_string()));
    }
    if target_ids.is_empty() {
        return Err(Error::NoTargets(pair.target_domain.to_string()));
    }
    Ok(PairPlan {
        pair: pair.clone(),
        queries,
        target_ids,
    })
}

/// Reuses cached rows and computes the rest; rewrites the cache when it grew.
fn cached_embeddings(
    cache_file: Option<PathBuf>,
    needed: &[String],
    provider_id: &str,
    compute: impl FnOnce(&[String]) -> Result<Vec<(String, EmbeddingVector)>>,
) -> Result<EmbeddingIndex> {
    let mut have: BTreeMap<String, EmbeddingVector> = BTreeMap::new();
    if let Some(path) = cache_file.as_ref().filter(|p| p.exists()) {
        match load_index(path) {
            Ok(idx) if idx.provider_id() == provider_id => {
                for (i, id) in idx.ids().iter().enumerate() {
                    have.insert(id.clone(), EmbeddingVector::from_unit(idx.row(i).to_vec())?);
                }
            }
            Ok(idx) => warn!("ignoring {}: built by {}", path.display(), idx.provider_id()),
            Err(e) => warn!("ignoring unreadable cache {}: {e}", path.display()),
        }
    }
    let missing: Vec<String> = needed.iter().filter(|id| !have.contains_key(*id)).cloned().collect();
    if !missing.is_empty() {
        for (id, v) in compute(&missing)? {
            have.insert(id, v);
        }
        if let Some(path) = &cache_file {
            let full = EmbeddingIndex::build(have.iter().map(|(k, v)| (k.clone(), v.clone())).collect(), provider_id)?;
            save_index(&full, path)?;
        }
    }
    let wanted: BTreeSet<&String> = needed.iter().collect();
    let rows = have.into_iter().filter(|(id, _)| wanted.contains(id)).collect();
    EmbeddingIndex::build(rows, provider_id)
}

/// Runs sweeps over one manifest, caching per-domain work across pairs.
pub struct Evaluator<'a> {
    manifest: &'a Manifest,
    providers: Providers<'a>,
    options: EvalOptions,
}

impl<'a> Evaluator<'a> {
    pub fn new(manifest: &'a Manifest, providers: Providers<'a>, options: EvalOptions) -> Result<Self> {
        options.retrieval.validate()?;
        if options.metrics.is_empty() {
            return Err(Error::InvalidArgument("no metrics requested".into()));
        }
        if providers.text.dim() != providers.image.dim() {
            return Err(Error::DimMismatch {
                expected: providers.text.dim(),
                got: providers.image.dim(),
            });
        }
        if let Some(dir) = &options.cache_dir {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        Ok(Self {
            manifest,
            providers,
            options,
        })
    }

    fn caption_source_id(&self) -> String {
        match self.options.retrieval.mode {
            RetrievalMode::Caption => self.providers.captioner.provider_id().to_string(),
            RetrievalMode::Oracle => format!("oracle-{}", self.options.retrieval.oracle_template),
        }
    }

    fn captions_for(&self, domain: &DomainId, targets: &[ImageRecord]) -> Result<Vec<CaptionRecord>> {
        let cache_file = self.options.cache_dir.as_ref().map(|dir| {
            dir.join(format!(
                "{}.{}.captions.jsonl",
                sanitize(domain.as_str()),
                sanitize(&self.caption_source_id())
            ))
        });
        let mut have: BTreeMap<String, CaptionRecord> = BTreeMap::new();
        if let Some(path) = cache_file.as_ref().filter(|p| p.exists()) {
            for r in load_captions(path)? {
                have.insert(r.image_id.clone(), r);
            }
        }
        let missing: Vec<ImageRecord> = targets.iter().filter(|r| !have.contains_key(&r.id)).cloned().collect();
        if !missing.is_empty() {
            let fresh = match self.options.retrieval.mode {
                RetrievalMode::Oracle => oracle_captions(&missing, &self.options.retrieval.oracle_template)?,
                RetrievalMode::Caption => {
                    let batch = caption_database(&missing, self.providers.captioner)?;
                    if !batch.failures.is_empty() {
                        warn!(
                            "{}: {} image(s) could not be captioned and are left out: {}",
                            domain,
                            batch.failures.len(),
                            batch.failed_ids().join(", ")
                        );
                    }
                    batch.records
                }
            };
            info!("{domain}: captioned {} image(s)", fresh.len());
            for r in fresh {
                have.insert(r.image_id.clone(), r);
            }
            if let Some(path) = &cache_file {
                save_captions(&have.values().cloned().collect::<Vec<_>>(), path)?;
            }
        }
        let wanted: BTreeSet<&str> = targets.iter().map(|r| r.id.as_str()).collect();
        Ok(have
            .into_values()
            .filter(|r| wanted.contains(r.image_id.as_str()))
            .collect())
    }

    fn target_index(&self, domain: &DomainId, ids: &BTreeSet<String>) -> Result<EmbeddingIndex> {
        let targets: Vec<ImageRecord> = ids
            .iter()
            .map(|id| {
                self.manifest
                    .get(id)
                    .cloned()
                    .ok_or_else(|| Error::UnknownId(id.clone()))
            })
            .collect::<Result<_>>()?;
        let captions = self.captions_for(domain, &targets)?;
        let by_id: HashMap<&str, &CaptionRecord> = captions.iter().map(|c| (c.image_id.as_str(), c)).collect();
        let needed: Vec<String> = captions.iter().map(|c| c.image_id.clone()).collect();
        let provider = self.providers.text.provider_id().to_string();
        let cache_file = self.options.cache_dir.as_ref().map(|dir| {
            let source = sanitize(&self.caption_source_id());
            dir.join(index_file_name(domain.as_str(), &format!("{source}.{provider}")))
        });
        cached_embeddings(cache_file, &needed, &provider, |missing| {
            let recs: Vec<CaptionRecord> = missing.iter().map(|id| by_id[id.as_str()].clone()).collect();
            let idx = embed_captions(&recs, self.providers.text)?;
            Ok(idx
                .ids()
                .iter()
                .enumerate()
                .map(|(i, id)| {
                    (
                        id.clone(),
                        EmbeddingVector::from_unit(idx.row(i).to_vec()).expect("unit row"),
                    )
                })
                .collect())
        })
    }

    fn query_vectors(&self, domain: &DomainId, queries: &BTreeSet<String>) -> Result<EmbeddingIndex> {
        let provider = self.providers.image.provider_id().to_string();
        let cache_file = self
            .options
            .cache_dir
            .as_ref()
            .map(|dir| dir.join(index_file_name(domain.as_str(), &format!("query.{provider}"))));
        let needed: Vec<String> = queries.iter().cloned().collect();
        cached_embeddings(cache_file, &needed, &provider, |missing| {
            let recs: Vec<ImageRecord> = missing
                .iter()
                .map(|id| {
                    self.manifest
                        .get(id)
                        .cloned()
                        .ok_or_else(|| Error::UnknownId(id.clone()))
                })
                .collect::<Result<_>>()?;
            let vecs = embed_query_images(&recs, self.providers.image)?;
            Ok(missing.iter().cloned().zip(vecs).collect())
        })
    }

    /// Evaluates pairs in the given order.
    pub fn sweep(&self, pairs: &[DomainPair]) -> Result<EvalReport> {
        if pairs.is_empty() {
            return Err(Error::InvalidArgument("no pairs to evaluate".into()));
        }
        let manifest = match self.options.filter {
            Some(f) if f.scope == FilterScope::DatasetWide => filter_categories(self.manifest, &f)?,
            _ => self.manifest.clone(),
        };
        let annotate = |pair: &DomainPair| {
            let label = pair.label();
            move |e: Error| Error::Pair {
                pair: label.clone(),
                source: Box::new(e),
            }
        };
        let plans = pairs
            .iter()
            .map(|p| plan_pair(&manifest, p, &self.options).map_err(annotate(p)))
            .collect::<Result<Vec<_>>>()?;

        let mut targets_by_domain: BTreeMap<DomainId, BTreeSet<String>> = BTreeMap::new();
        let mut queries_by_domain: BTreeMap<DomainId, BTreeSet<String>> = BTreeMap::new();
        for plan in &plans {
            targets_by_domain
                .entry(plan.pair.target_domain.clone())
                .or_default()
                .extend(plan.target_ids.iter().cloned());
            queries_by_domain
                .entry(plan.pair.query_domain.clone())
                .or_default()
                .extend(plan.queries.iter().map(|r| r.id.clone()));
        }
        let mut target_indexes = BTreeMap::new();
        for (domain, ids) in &targets_by_domain {
            target_indexes.insert(domain.clone(), self.target_index(domain, ids)?);
        }
        let mut query_indexes = BTreeMap::new();
        for (domain, ids) in &queries_by_domain {
            query_indexes.insert(domain.clone(), self.query_vectors(domain, ids)?);
        }

        let mut rows = Vec::with_capacity(plans.len());
        for plan in &plans {
            let full = &target_indexes[&plan.pair.target_domain];
            let queries = &query_indexes[&plan.pair.query_domain];
            let row = self.evaluate_plan(plan, full, queries).map_err(annotate(&plan.pair))?;
            info!("{}: {} queries, {} skipped", plan.pair, row.n_queries, row.skipped);
            rows.push(row);
        }
        Ok(EvalReport::new(
            manifest.dataset_name.clone(),
            self.options.mode_label(),
            self.options.metrics.clone(),
            rows,
        ))
    }

    fn evaluate_plan(&self, plan: &PairPlan, full: &EmbeddingIndex, queries: &EmbeddingIndex) -> Result<PairMetrics> {
        let target = subset(full, &plan.target_ids)?;
        let target_categories: Vec<Option<&CategoryId>> = target
            .ids()
            .iter()
            .map(|id| self.manifest.get(id).and_then(|r| r.category.as_ref()))
            .collect();
        let position: HashMap<&str, usize> = target
            .ids()
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), i))
            .collect();
        let cutoffs: Vec<usize> = self
            .options
            .metrics
            .iter()
            .filter_map(|m| match m {
                Metric::PrecisionAt(k) => Some(*k),
                Metric::MapAll => None,
            })
            .collect();
        let want_map = self.options.metrics.contains(&Metric::MapAll);
        let max_k = cutoffs.iter().copied().max().unwrap_or(1);

        // None = skipped (no relevant target)
        let per_query: Vec<Option<(Vec<f64>, f64)>> = plan
            .queries
            .par_iter()
            .map(|q| -> Result<Option<(Vec<f64>, f64)>> {
                let qc = q.category.as_ref().expect("queries are labeled");
                let qi = queries.position(&q.id).ok_or_else(|| Error::UnknownId(q.id.clone()))?;
                let qv = EmbeddingVector::from_unit(queries.row(qi).to_vec())?;
                let total_relevant = target_categories
                    .iter()
                    .zip(target.ids())
                    .filter(|(c, id)| **c == Some(qc) && *id != &q.id)
                    .count();
                if total_relevant == 0 {
                    return Ok(None);
                }
                let depth = if want_map { target.len() } else { max_k };
                let ranked = rank(&q.id, &qv, &target, depth.max(1))?;
                let rel: Vec<bool> = ranked
                    .ids()
                    .map(|id| target_categories[position[id]] == Some(qc))
                    .collect();
                let ps = cutoffs.iter().map(|&k| precision_at_k(&rel, k)).collect();
                let ap = if want_map {
                    average_precision(&rel, total_relevant)?
                } else {
                    0.0
                };
                Ok(Some((ps, ap)))
            })
            .collect::<Result<_>>()?;

        let scored: Vec<&(Vec<f64>, f64)> = per_query.iter().flatten().collect();
        let skipped = per_query.len() - scored.len();
        if skipped > 0 {
            warn!(
                "{}: {skipped} query(ies) have no relevant target and are skipped",
                plan.pair
            );
        }
        if scored.is_empty() {
            return Err(Error::NoQueries(plan.pair.query_domain.to_string()));
        }
        let n = scored.len() as f64;
        let p_at = cutoffs
            .iter()
            .enumerate()
            .map(|(j, &k)| (k, scored.iter().map(|s| s.0[j]).sum::<f64>() / n))
            .collect();
        let map_at_all = want_map.then(|| scored.iter().map(|s| s.1).sum::<f64>() / n);
        Ok(PairMetrics {
            pair: plan.pair.clone(),
            p_at,
            map_at_all,
            n_queries: scored.len(),
            skipped,
            n_targets: target.len(),
        })
    }
}

fn subset(full: &EmbeddingIndex, ids: &BTreeSet<String>) -> Result<EmbeddingIndex> {
    let rows: Vec<(String, EmbeddingVector)> = full
        .ids()
        .iter()
        .enumerate()
        .filter(|(_, id)| ids.contains(*id))
        .map(|(i, id)| Ok((id.clone(), EmbeddingVector::from_unit(full.row(i).to_vec())?)))
        .collect::<Result<_>>()?;
    EmbeddingIndex::build(rows, full.provider_id())
}

/// Evaluates one ordered domain pair.
pub fn evaluate_pair(
    manifest: &Manifest,
    pair: &DomainPair,
    options: &EvalOptions,
    providers: Providers<'_>,
) -> Result<PairMetrics> {
    let report = Evaluator::new(manifest, providers, options.clone())?.sweep(std::slice::from_ref(pair))?;
    Ok(report.pairs.into_iter().next().expect("one pair evaluated"))
}

/// Evaluates every pair and averages the rows.
pub fn sweep_pairs(
    manifest: &Manifest,
    pairs: &[DomainPair],
    options: &EvalOptions,
    providers: Providers<'_>,
) -> Result<EvalReport> {
    Evaluator::new(manifest, providers, options.clone())?.sweep(pairs)
}
