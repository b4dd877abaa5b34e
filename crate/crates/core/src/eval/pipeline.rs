use std::str::FromStr;
use std::time::Instant;

use serde::Serialize;

use super::metrics::{latency_stats, mrr_at_k, ndcg_at_k, recall_at_k};
use crate::cluster::{full_dense_search, ClusterModel};
use crate::corpus::{Corpus, Qrels, QueryRecord, QuerySet};
use crate::error::{invalid, Error, Result};
use crate::fusion::{fuse, FusionConfig};
use crate::kv::KvMap;
use crate::lstm::LstmParams;
use crate::ranked::{RankedList, Scored, TopK};
use crate::selector::{select_for_query, SelectorConfig};
use crate::sparse::{boundaries_for_depth, InvertedIndex};
use crate::storage::{DiskStore, IoStats};
use crate::vecmath::dot;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PipelineKind {
    Sparse,
    DenseFull,
    FuseFull,
    FuseIvf,
    FuseRerank,
    FuseClusd,
}

impl PipelineKind {
    pub const ALL: [PipelineKind; 6] = [
        Self::Sparse,
        Self::DenseFull,
        Self::FuseFull,
        Self::FuseIvf,
        Self::FuseRerank,
        Self::FuseClusd,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Sparse => "sparse",
            Self::DenseFull => "dense_full",
            Self::FuseFull => "fuse_full",
            Self::FuseIvf => "fuse_ivf",
            Self::FuseRerank => "fuse_rerank",
            Self::FuseClusd => "fuse_clusd",
        }
    }
}

impl std::fmt::Display for PipelineKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PipelineKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| invalid(format!("unknown pipeline `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub kind: PipelineKind,
    /// Sparse retrieval depth and output length.
    pub k: usize,
    pub fusion: FusionConfig,
    pub selector: SelectorConfig,
    /// Clusters probed by the IVF baseline.
    pub ivf_budget: usize,
    /// Timed runs per query; the fastest one is reported.
    pub repetitions: usize,
}

impl PipelineConfig {
    pub fn new(kind: PipelineKind, k: usize) -> Self {
        let mut selector = SelectorConfig::default();
        selector.bin_boundaries = boundaries_for_depth(&selector.bin_boundaries, k);
        Self {
            kind,
            k,
            fusion: FusionConfig::default(),
            selector,
            ivf_budget: 1,
            repetitions: 3,
        }
    }

    pub fn to_kv(&self) -> KvMap {
        let mut kv = KvMap::new();
        kv.set("pipeline", self.kind);
        kv.set("k", self.k);
        kv.set("alpha", self.fusion.alpha);
        kv.set("impute_factor", self.fusion.impute_factor);
        kv.set("stage1_n", self.selector.n);
        kv.set("cluster_bins", self.selector.u);
        kv.set("theta", self.selector.theta);
        kv.set("stage1_order", self.selector.order);
        kv.set(
            "bin_boundaries",
            self.selector
                .bin_boundaries
                .iter()
                .map(|b| b.to_string())
                .collect::<Vec<_>>()
                .join(","),
        );
        kv.set("ivf_budget", self.ivf_budget);
        kv.set("repetitions", self.repetitions);
        kv
    }
}

/// Immutable retrieval artifacts shared by every pipeline.
#[derive(Debug, Clone, Copy)]
pub struct Components<'a> {
    pub corpus: &'a Corpus,
    pub index: &'a InvertedIndex,
    pub model: &'a ClusterModel,
    pub lstm: Option<&'a LstmParams>,
}

impl Components<'_> {
    pub fn check(&self, queries: &QuerySet, config: &PipelineConfig) -> Result<()> {
        self.model.check_compatible(self.corpus)?;
        if self.index.doc_count() != self.corpus.len() {
            return Err(Error::Incompatible(format!(
                "index covers {} docs, corpus has {}",
                self.index.doc_count(),
                self.corpus.len()
            )));
        }
        if queries.dim() != self.corpus.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.corpus.dim(),
                found: queries.dim(),
            });
        }
        if config.k == 0 {
            return Err(invalid("k must be at least 1"));
        }
        match config.kind {
            PipelineKind::FuseClusd => {
                config.selector.validate(self.model.num_clusters())?;
                let lstm = self
                    .lstm
                    .ok_or_else(|| invalid("fuse_clusd needs trained selector parameters"))?;
                if lstm.input_dim() != config.selector.input_dim() {
                    return Err(Error::DimensionMismatch {
                        expected: config.selector.input_dim(),
                        found: lstm.input_dim(),
                    });
                }
            }
            PipelineKind::FuseIvf
                if config.ivf_budget == 0 || config.ivf_budget > self.model.num_clusters() =>
            {
                return Err(invalid(format!(
                    "ivf budget {} must be in 1..={}",
                    config.ivf_budget,
                    self.model.num_clusters()
                )));
            }
            _ => {}
        }
        Ok(())
    }
}

/// Where dense embeddings are read from.
pub enum DenseBackend<'s> {
    Memory,
    Disk(&'s mut DiskStore),
}

impl DenseBackend<'_> {
    pub fn is_disk(&self) -> bool {
        matches!(self, Self::Disk(_))
    }

    fn score_clusters(
        &mut self,
        c: &Components,
        clusters: &[u32],
        query: &[f32],
    ) -> Result<Vec<Scored>> {
        match self {
            Self::Memory => Ok(clusters
                .iter()
                .flat_map(|&cl| c.model.members(cl))
                .map(|&d| Scored::new(d, dot(query, c.corpus.dense(d))))
                .collect()),
            Self::Disk(store) => {
                let (blocks, _) = store.fetch_clusters(clusters)?;
                Ok(blocks
                    .iter()
                    .flat_map(|b| b.rows())
                    .map(|(d, v)| Scored::new(d, dot(query, v)))
                    .collect())
            }
        }
    }

    fn score_documents(
        &mut self,
        c: &Components,
        docs: &[u32],
        query: &[f32],
    ) -> Result<Vec<Scored>> {
        match self {
            Self::Memory => Ok(docs
                .iter()
                .map(|&d| Scored::new(d, dot(query, c.corpus.dense(d))))
                .collect()),
            Self::Disk(store) => {
                let dim = store.dim();
                let (ids, vectors, _) = store.fetch_documents(docs)?;
                Ok(ids
                    .iter()
                    .zip(vectors.chunks_exact(dim))
                    .map(|(&d, v)| Scored::new(d, dot(query, v)))
                    .collect())
            }
        }
    }

    fn stats(&self) -> IoStats {
        match self {
            Self::Memory => IoStats::default(),
            Self::Disk(store) => *store.stats(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct QueryRun {
    pub query_id: u32,
    pub ranked: RankedList,
    /// Fastest wall time plus simulated I/O overhead, in seconds.
    pub latency: f64,
    pub wall_time: f64,
    pub clusters_selected: usize,
    pub docs_scored: usize,
    pub io: IoStats,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub kind: PipelineKind,
    pub disk: bool,
    pub config: KvMap,
    pub queries: Vec<QueryRun>,
    pub io: IoStats,
}

impl RunResult {
    pub fn label(&self) -> String {
        format!("{}{}", self.kind, if self.disk { "@disk" } else { "" })
    }

    pub fn results(&self) -> impl Iterator<Item = (u32, &RankedList)> + Clone + '_ {
        self.queries.iter().map(|q| (q.query_id, &q.ranked))
    }

    pub fn report(&self, qrels: &Qrels) -> Result<MetricsReport> {
        let k = self.config.get_or("k", 1000usize)?;
        let lat: Vec<f64> = self.queries.iter().map(|q| q.latency).collect();
        let wall: Vec<f64> = self.queries.iter().map(|q| q.wall_time).collect();
        let (latency_mean, latency_p99) = latency_stats(&lat)?;
        let (wall_mean, _) = latency_stats(&wall)?;
        let n = self.queries.len() as f64;
        let avg = |f: &dyn Fn(&QueryRun) -> f64| self.queries.iter().map(f).sum::<f64>() / n;
        Ok(MetricsReport {
            pipeline: self.label(),
            num_queries: self.queries.len(),
            k,
            mrr_at_10: mrr_at_k(self.results(), qrels, 10),
            recall_at_k: recall_at_k(self.results(), qrels, k),
            ndcg_at_10: ndcg_at_k(self.results(), qrels, 10),
            avg_clusters_selected: avg(&|q| q.clusters_selected as f64),
            docs_scored_avg: avg(&|q| q.docs_scored as f64),
            read_ops_avg: avg(&|q| q.io.read_ops as f64),
            bytes_read_avg: avg(&|q| q.io.bytes_read as f64),
            latency_mean,
            latency_p99,
            wall_mean,
            simulated_overhead_avg: avg(&|q| q.io.simulated_overhead),
        })
    }
}

/// Per-pipeline summary. Everything above `latency_mean` is deterministic.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub pipeline: String,
    pub num_queries: usize,
    pub k: usize,
    pub mrr_at_10: f64,
    pub recall_at_k: f64,
    pub ndcg_at_10: f64,
    pub avg_clusters_selected: f64,
    pub docs_scored_avg: f64,
    pub read_ops_avg: f64,
    pub bytes_read_avg: f64,
    pub latency_mean: f64,
    pub latency_p99: f64,
    pub wall_mean: f64,
    pub simulated_overhead_avg: f64,
}

struct QueryOutput {
    ranked: RankedList,
    clusters: usize,
    docs: usize,
}

fn execute(
    c: &Components,
    backend: &mut DenseBackend,
    config: &PipelineConfig,
    q: &QueryRecord,
) -> Result<QueryOutput> {
    let dq = q.dense.as_slice();
    let k = config.k;
    let n = c.model.num_clusters();
    // the dense side's retrieved set is its own top-k
    let fused = |sparse: &RankedList, dense: &[Scored]| {
        fuse(sparse, &top_scored(dense, k), &config.fusion, k)
    };
    Ok(match config.kind {
        PipelineKind::Sparse => QueryOutput {
            ranked: c.index.search(&q.sparse, k),
            clusters: 0,
            docs: 0,
        },
        PipelineKind::DenseFull => {
            let ranked = match backend {
                DenseBackend::Memory => full_dense_search(c.corpus, dq, k)?,
                _ => {
                    let all: Vec<u32> = (0..n as u32).collect();
                    let mut top = TopK::new(k);
                    for e in backend.score_clusters(c, &all, dq)? {
                        top.push(e.doc_id, e.score);
                    }
                    top.into_ranked()
                }
            };
            QueryOutput {
                ranked,
                clusters: n,
                docs: c.corpus.len(),
            }
        }
        PipelineKind::FuseFull => {
            let sparse = c.index.search(&q.sparse, k);
            let all: Vec<u32> = (0..n as u32).collect();
            let dense = backend.score_clusters(c, &all, dq)?;
            QueryOutput {
                ranked: fused(&sparse, &dense)?,
                clusters: n,
                docs: dense.len(),
            }
        }
        PipelineKind::FuseIvf => {
            let sparse = c.index.search(&q.sparse, k);
            let mut probe = c.model.clusters_by_similarity(dq);
            probe.truncate(config.ivf_budget);
            let dense = backend.score_clusters(c, &probe, dq)?;
            QueryOutput {
                ranked: fused(&sparse, &dense)?,
                clusters: probe.len(),
                docs: dense.len(),
            }
        }
        PipelineKind::FuseRerank => {
            let sparse = c.index.search(&q.sparse, k);
            let ids: Vec<u32> = sparse.doc_ids().collect();
            let dense = backend.score_documents(c, &ids, dq)?;
            QueryOutput {
                ranked: fused(&sparse, &dense)?,
                clusters: 0,
                docs: dense.len(),
            }
        }
        PipelineKind::FuseClusd => {
            let lstm = c
                .lstm
                .ok_or_else(|| invalid("fuse_clusd needs trained selector parameters"))?;
            let sparse = c.index.search(&q.sparse, k);
            let sel = select_for_query(c.model, lstm, &config.selector, &sparse, dq)?;
            let dense = backend.score_clusters(c, &sel.selected, dq)?;
            QueryOutput {
                ranked: fused(&sparse, &dense)?,
                clusters: sel.selected.len(),
                docs: dense.len(),
            }
        }
    })
}

fn top_scored(scored: &[Scored], k: usize) -> Vec<Scored> {
    if scored.len() <= k {
        return scored.to_vec();
    }
    let mut top = TopK::new(k);
    for e in scored {
        top.push(e.doc_id, e.score);
    }
    top.into_ranked().into_entries()
}

/// Runs one pipeline over every query, single-threaded, timing each query
/// `config.repetitions` times and keeping the fastest run.
pub fn run_pipeline(
    components: &Components,
    backend: &mut DenseBackend,
    queries: &QuerySet,
    config: &PipelineConfig,
) -> Result<RunResult> {
    components.check(queries, config)?;
    if let DenseBackend::Disk(store) = backend {
        store.check_compatible(components.model)?;
    }
    let reps = config.repetitions.max(1);
    let mut runs = Vec::with_capacity(queries.len());
    let mut total = IoStats::new(backend.stats().per_op_overhead);
    for q in queries {
        let mut best: Option<(f64, f64)> = None;
        let mut last = None;
        for _ in 0..reps {
            let before = backend.stats();
            let start = Instant::now();
            let out = execute(components, backend, config, q)?;
            let wall = start.elapsed().as_secs_f64();
            let io = backend.stats().since(&before);
            let latency = wall + io.simulated_overhead;
            if best.map_or(true, |(l, _)| latency < l) {
                best = Some((latency, wall));
            }
            last = Some((out, io));
        }
        let (out, io) = last.expect("at least one repetition");
        let (latency, wall_time) = best.expect("at least one repetition");
        total.merge(&io);
        runs.push(QueryRun {
            query_id: q.query_id,
            ranked: out.ranked,
            latency,
            wall_time,
            clusters_selected: out.clusters,
            docs_scored: out.docs,
            io,
        });
    }
    let mut kv = config.to_kv();
    kv.set("mode", if backend.is_disk() { "disk" } else { "memory" });
    Ok(RunResult {
        kind: config.kind,
        disk: backend.is_disk(),
        config: kv,
        queries: runs,
        io: total,
    })
}

/// Metric-only evaluation spread over worker threads. Latencies are not
/// meaningful in this mode and are reported as zero.
pub fn run_pipeline_parallel(
    components: &Components,
    queries: &QuerySet,
    config: &PipelineConfig,
    threads: usize,
) -> Result<RunResult> {
    components.check(queries, config)?;
    let all = queries.queries();
    let chunk = all.len().div_ceil(threads.max(1)).max(1);
    let parts: Vec<Result<Vec<QueryRun>>> = std::thread::scope(|s| {
        let handles: Vec<_> = all
            .chunks(chunk)
            .map(|part| {
                s.spawn(move || {
                    let mut backend = DenseBackend::Memory;
                    part.iter()
                        .map(|q| {
                            let out = execute(components, &mut backend, config, q)?;
                            Ok(QueryRun {
                                query_id: q.query_id,
                                ranked: out.ranked,
                                latency: 0.0,
                                wall_time: 0.0,
                                clusters_selected: out.clusters,
                                docs_scored: out.docs,
                                io: IoStats::default(),
                            })
                        })
                        .collect()
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("worker panicked"))
            .collect()
    });
    let mut runs = Vec::with_capacity(all.len());
    for p in parts {
        runs.extend(p?);
    }
    let mut kv = config.to_kv();
    kv.set("mode", "memory");
    Ok(RunResult {
        kind: config.kind,
        disk: false,
        config: kv,
        queries: runs,
        io: IoStats::default(),
    })
}
