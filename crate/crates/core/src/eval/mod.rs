//! Evaluation protocol: metrics, domain pairs, sweeps and reports.

pub mod harness;
pub mod metrics;
pub mod pairs;
pub mod report;

pub use harness::{evaluate_pair, sweep_pairs, EvalOptions, Evaluator, Providers};
pub use metrics::{average_precision, parse_metrics, precision_at_k, relevance, Metric};
pub use pairs::{all_ordered_pairs, parse_pair, resolve_pairs, DomainPair};
pub use report::{
    emit_report, export_embeddings_2d, format_fixed4, load_report_json, report_to_csv, report_to_json, EvalReport,
    PairMetrics, ReportFormat,
};
