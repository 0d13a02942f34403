//! Evaluation reports (CSV/JSON) and raw embedding export.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::metrics::Metric;
use crate::eval::pairs::DomainPair;
use crate::index::EmbeddingIndex;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairMetrics {
    pub pair: DomainPair,
    /// Precision at each requested cutoff.
    pub p_at: BTreeMap<usize, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub map_at_all: Option<f64>,
    /// Queries that contributed to the metrics.
    pub n_queries: usize,
    /// Queries without any relevant target, left out of every metric.
    pub skipped: usize,
    /// Size of the ranked target database.
    pub n_targets: usize,
}

impl PairMetrics {
    pub fn value(&self, metric: Metric) -> Option<f64> {
        match metric {
            Metric::PrecisionAt(k) => self.p_at.get(&k).copied(),
            Metric::MapAll => self.map_at_all,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset_name: String,
    /// `caption` or `oracle`.
    pub mode: String,
    pub metrics: Vec<Metric>,
    pub pairs: Vec<PairMetrics>,
    /// Unweighted mean over pairs, keyed by metric label.
    pub averages: BTreeMap<String, f64>,
}

impl EvalReport {
    pub fn new(
        dataset_name: impl Into<String>,
        mode: impl Into<String>,
        metrics: Vec<Metric>,
        pairs: Vec<PairMetrics>,
    ) -> Self {
        let mut averages = BTreeMap::new();
        for &m in &metrics {
            let values: Vec<f64> = pairs.iter().filter_map(|p| p.value(m)).collect();
            if !values.is_empty() {
                averages.insert(m.to_string(), values.iter().sum::<f64>() / values.len() as f64);
            }
        }
        Self {
            dataset_name: dataset_name.into(),
            mode: mode.into(),
            metrics,
            pairs,
            averages,
        }
    }

    pub fn average(&self, metric: Metric) -> Option<f64> {
        self.averages.get(&metric.to_string()).copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(Error::InvalidArgument(format!("unknown report format {other:?}"))),
        }
    }
}

/// Fixed 4-decimal formatting, rounding half away from zero on the value's
/// shortest decimal representation (so 0.80345 becomes 0.8035).
pub fn format_fixed4(x: f64) -> String {
    let s = format!("{}", x.abs());
    let (int_part, frac_part) = s.split_once('.').unwrap_or((&s, ""));
    let mut digits: Vec<u8> = int_part.bytes().map(|b| b - b'0').collect();
    let frac: Vec<u8> = frac_part.bytes().map(|b| b - b'0').collect();
    digits.extend((0..4).map(|i| frac.get(i).copied().unwrap_or(0)));
    if frac.get(4).is_some_and(|&d| d >= 5) {
        let mut i = digits.len();
        loop {
            if i == 0 {
                digits.insert(0, 1);
                break;
            }
            i -= 1;
            if digits[i] == 9 {
                digits[i] = 0;
            } else {
                digits[i] += 1;
                break;
            }
        }
    }
    let split = digits.len() - 4;
    let int_str: String = digits[..split].iter().map(|d| (b'0' + d) as char).collect();
    let frac_str: String = digits[split..].iter().map(|d| (b'0' + d) as char).collect();
    let negative = x < 0.0 && digits.iter().any(|&d| d != 0);
    format!("{}{}.{}", if negative { "-" } else { "" }, int_str, frac_str)
}

pub fn report_to_csv(report: &EvalReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["pair".to_string()];
    header.extend(report.metrics.iter().map(|m| m.to_string()));
    let csv_err = |e: csv::Error| Error::InvalidArgument(format!("csv encoding failed: {e}"));
    w.write_record(&header).map_err(csv_err)?;
    let cell = |v: Option<f64>| v.map(format_fixed4).unwrap_or_default();
    for p in &report.pairs {
        let mut row = vec![p.pair.label()];
        row.extend(report.metrics.iter().map(|&m| cell(p.value(m))));
        w.write_record(&row).map_err(csv_err)?;
    }
    let mut avg = vec!["Avg".to_string()];
    avg.extend(report.metrics.iter().map(|&m| cell(report.average(m))));
    w.write_record(&avg).map_err(csv_err)?;
    let bytes = w.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

/// Canonical JSON: keys sorted, pretty-printed, trailing newline.
pub fn report_to_json(report: &EvalReport) -> String {
    let value = serde_json::to_value(report).expect("report serializes");
    let mut s = serde_json::to_string_pretty(&value).expect("value serializes");
    s.push('\n');
    s
}

pub fn emit_report(report: &EvalReport, format: ReportFormat, path: &Path) -> Result<()> {
    let text = match format {
        ReportFormat::Csv => report_to_csv(report)?,
        ReportFormat::Json => report_to_json(report),
    };
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_report_json(path: &Path) -> Result<EvalReport> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })
}

/// Writes `id,label,v0,...,v{dim-1}` rows for external projection tools.
/// Values carry 9 significant digits, enough to recover every `f32`.
pub fn export_embeddings_2d(index: &EmbeddingIndex, labels: &BTreeMap<String, String>, path: &Path) -> Result<()> {
    if let Some(id) = index.ids().iter().find(|id| !labels.contains_key(*id)) {
        return Err(Error::MissingLabel(id.clone()));
    }
    let csv_err = |e: csv::Error| Error::InvalidArgument(format!("csv encoding failed: {e}"));
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["id".to_string(), "label".to_string()];
    header.extend((0..index.dim()).map(|i| format!("v{i}")));
    w.write_record(&header).map_err(csv_err)?;
    for (i, id) in index.ids().iter().enumerate() {
        let mut row = vec![id.clone(), labels[id].clone()];
        row.extend(index.row(i).iter().map(|v| format!("{v:.8e}")));
        w.write_record(&row).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
