//! Ranking metrics, latency statistics and end-to-end pipeline runners.

mod metrics;
mod pipeline;
mod report;

pub use metrics::{latency_stats, mrr_at_k, ndcg_at_k, percentile, recall_at_k};
pub use pipeline::{
    run_pipeline, run_pipeline_parallel, Components, DenseBackend, MetricsReport, PipelineConfig,
    PipelineKind, QueryRun, RunResult,
};
pub use report::{
    metrics_csv, metrics_json, metrics_kv, metrics_table, report_json, timing_csv, timing_kv,
    timing_table, write_run_file,
};
