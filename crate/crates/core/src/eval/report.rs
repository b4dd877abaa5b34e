use std::fmt::Write as _;
use std::io::{self, Write};

use super::pipeline::{MetricsReport, RunResult};

/// Six-column run file: `query_id Q0 doc_id rank score tag`.
pub fn write_run_file<W: Write>(w: &mut W, run: &RunResult, tag: &str) -> io::Result<()> {
    for q in &run.queries {
        for (rank, e) in q.ranked.entries().iter().enumerate() {
            writeln!(
                w,
                "{} Q0 {} {} {} {}",
                q.query_id,
                e.doc_id,
                rank + 1,
                e.score,
                tag
            )?;
        }
    }
    Ok(())
}

/// Deterministic metrics as `pipeline.key=value` lines.
pub fn metrics_kv(reports: &[MetricsReport]) -> String {
    let mut out = String::new();
    for r in reports {
        let p = &r.pipeline;
        let _ = writeln!(out, "{p}.num_queries={}", r.num_queries);
        let _ = writeln!(out, "{p}.k={}", r.k);
        let _ = writeln!(out, "{p}.mrr_at_10={}", r.mrr_at_10);
        let _ = writeln!(out, "{p}.recall_at_k={}", r.recall_at_k);
        let _ = writeln!(out, "{p}.ndcg_at_10={}", r.ndcg_at_10);
        let _ = writeln!(out, "{p}.avg_clusters_selected={}", r.avg_clusters_selected);
        let _ = writeln!(out, "{p}.docs_scored_avg={}", r.docs_scored_avg);
        let _ = writeln!(out, "{p}.read_ops_avg={}", r.read_ops_avg);
        let _ = writeln!(out, "{p}.bytes_read_avg={}", r.bytes_read_avg);
    }
    out
}

/// Timing fields, kept apart from the deterministic metrics.
pub fn timing_kv(reports: &[MetricsReport]) -> String {
    let mut out = String::new();
    for r in reports {
        let p = &r.pipeline;
        let _ = writeln!(out, "{p}.latency_mean={}", r.latency_mean);
        let _ = writeln!(out, "{p}.latency_p99={}", r.latency_p99);
        let _ = writeln!(out, "{p}.wall_mean={}", r.wall_mean);
        let _ = writeln!(
            out,
            "{p}.simulated_overhead_avg={}",
            r.simulated_overhead_avg
        );
    }
    out
}

#[derive(serde::Serialize)]
struct MetricsOnly<'a> {
    pipeline: &'a str,
    num_queries: usize,
    k: usize,
    mrr_at_10: f64,
    recall_at_k: f64,
    ndcg_at_10: f64,
    avg_clusters_selected: f64,
    docs_scored_avg: f64,
    read_ops_avg: f64,
    bytes_read_avg: f64,
}

pub fn metrics_json(reports: &[MetricsReport]) -> String {
    let rows: Vec<MetricsOnly> = reports
        .iter()
        .map(|r| MetricsOnly {
            pipeline: &r.pipeline,
            num_queries: r.num_queries,
            k: r.k,
            mrr_at_10: r.mrr_at_10,
            recall_at_k: r.recall_at_k,
            ndcg_at_10: r.ndcg_at_10,
            avg_clusters_selected: r.avg_clusters_selected,
            docs_scored_avg: r.docs_scored_avg,
            read_ops_avg: r.read_ops_avg,
            bytes_read_avg: r.bytes_read_avg,
        })
        .collect();
    serde_json::to_string_pretty(&rows).expect("plain data serializes") + "\n"
}

/// Full report including timings, as JSON.
pub fn report_json(reports: &[MetricsReport]) -> String {
    serde_json::to_string_pretty(reports).expect("plain data serializes") + "\n"
}

fn metric_rows(reports: &[MetricsReport]) -> (Vec<&'static str>, Vec<Vec<String>>) {
    let header = vec![
        "pipeline",
        "MRR@10",
        "R@k",
        "NDCG@10",
        "clusters",
        "docs_scored",
        "read_ops",
    ];
    let rows = reports
        .iter()
        .map(|r| {
            vec![
                r.pipeline.clone(),
                format!("{:.4}", r.mrr_at_10),
                format!("{:.4}", r.recall_at_k),
                format!("{:.4}", r.ndcg_at_10),
                format!("{:.2}", r.avg_clusters_selected),
                format!("{:.1}", r.docs_scored_avg),
                format!("{:.2}", r.read_ops_avg),
            ]
        })
        .collect();
    (header, rows)
}

fn timing_rows(reports: &[MetricsReport]) -> (Vec<&'static str>, Vec<Vec<String>>) {
    let header = vec!["pipeline", "mean_ms", "p99_ms", "wall_ms", "sim_io_ms"];
    let rows = reports
        .iter()
        .map(|r| {
            vec![
                r.pipeline.clone(),
                format!("{:.3}", r.latency_mean * 1e3),
                format!("{:.3}", r.latency_p99 * 1e3),
                format!("{:.3}", r.wall_mean * 1e3),
                format!("{:.3}", r.simulated_overhead_avg * 1e3),
            ]
        })
        .collect();
    (header, rows)
}

fn aligned(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let mut out = String::new();
    let line = |cells: Vec<&str>, out: &mut String| {
        let parts: Vec<String> = cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, &w))| {
                if i == 0 {
                    format!("{c:<w$}")
                } else {
                    format!("{c:>w$}")
                }
            })
            .collect();
        let _ = writeln!(out, "{}", parts.join("  ").trim_end());
    };
    line(header.to_vec(), &mut out);
    let _ = writeln!(
        out,
        "{}",
        "-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1))
    );
    for row in rows {
        line(row.iter().map(String::as_str).collect(), &mut out);
    }
    out
}

fn csv(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut out = header.join(",") + "\n";
    for row in rows {
        out += &row.join(",");
        out.push('\n');
    }
    out
}

pub fn metrics_table(reports: &[MetricsReport]) -> String {
    let (h, r) = metric_rows(reports);
    aligned(&h, &r)
}

pub fn metrics_csv(reports: &[MetricsReport]) -> String {
    let (h, r) = metric_rows(reports);
    csv(&h, &r)
}

pub fn timing_table(reports: &[MetricsReport]) -> String {
    let (h, r) = timing_rows(reports);
    aligned(&h, &r)
}

pub fn timing_csv(reports: &[MetricsReport]) -> String {
    let (h, r) = timing_rows(reports);
    csv(&h, &r)
}
