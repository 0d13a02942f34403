//! Category-level relevance, P@k and average precision.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::Manifest;
use crate::error::{Error, Result};
use crate::types::ImageRecord;

/// A result is relevant when its category equals the query's.
pub fn relevance(query: &ImageRecord, result_id: &str, manifest: &Manifest) -> Result<bool> {
    let result = manifest
        .get(result_id)
        .ok_or_else(|| Error::UnknownId(result_id.to_string()))?;
    let q = query
        .category
        .as_ref()
        .ok_or_else(|| Error::Unlabeled(query.id.clone()))?;
    let r = result
        .category
        .as_ref()
        .ok_or_else(|| Error::Unlabeled(result.id.clone()))?;
    Ok(q == r)
}

/// Hits among the first `k` positions divided by `k`. The denominator stays
/// `k` when the ranking is shorter than `k`.
pub fn precision_at_k(ranked_relevance: &[bool], k: usize) -> f64 {
    assert!(k >= 1, "precision_at_k needs k >= 1");
    let hits = ranked_relevance.iter().take(k).filter(|&&r| r).count();
    hits as f64 / k as f64
}

/// Mean of the precision at each relevant position, over `total_relevant`.
/// Relevant items missing from the ranking contribute zero.
pub fn average_precision(ranked_relevance: &[bool], total_relevant: usize) -> Result<f64> {
    if total_relevant == 0 {
        return Err(Error::NoRelevant);
    }
    let mut hits = 0usize;
    let mut sum = 0.0f64;
    for (i, &rel) in ranked_relevance.iter().enumerate() {
        if rel {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    if hits > total_relevant {
        return Err(Error::InvalidArgument(format!(
            "ranking holds {hits} relevant items but total_relevant is {total_relevant}"
        )));
    }
    Ok(sum / total_relevant as f64)
}

/// Metric selector, written `p@<k>` or `map` on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Metric {
    PrecisionAt(usize),
    /// Mean average precision over the full target ranking.
    MapAll,
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Metric::PrecisionAt(k) => write!(f, "P@{k}"),
            Metric::MapAll => f.write_str("mAP@All"),
        }
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        if matches!(lower.as_str(), "map" | "map@all") {
            return Ok(Metric::MapAll);
        }
        if let Some(k) = lower.strip_prefix("p@") {
            return match k.parse::<usize>() {
                Ok(k) if k >= 1 => Ok(Metric::PrecisionAt(k)),
                _ => Err(Error::InvalidArgument(format!("bad precision cutoff in {s:?}"))),
            };
        }
        Err(Error::InvalidArgument(format!(
            "unknown metric {s:?} (expected p@<k> or map)"
        )))
    }
}

impl Serialize for Metric {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Metric {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Parses a comma-separated metric list, keeping order and dropping repeats.
pub fn parse_metrics(list: &str) -> Result<Vec<Metric>> {
    let mut out: Vec<Metric> = Vec::new();
    for part in list.split(',').filter(|p| !p.trim().is_empty()) {
        let m: Metric = part.parse()?;
        if !out.contains(&m) {
            out.push(m);
        }
    }
    if out.is_empty() {
        return Err(Error::InvalidArgument("no metrics requested".into()));
    }
    Ok(out)
}
