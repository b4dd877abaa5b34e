//! Two-stage dense cluster selection.
//!
//! Stage I orders clusters by how many of the top sparse results they hold,
//! compared bin by bin from the best sparse ranks down (a multikey sort on
//! priority vectors), and keeps the first `n`. Stage II describes each of
//! those `n` clusters with `1 + u + 2v` features and lets an LSTM score them
//! in Stage-I order; clusters scoring at least `theta` are visited.

use std::collections::HashMap;
use std::ops::Range;

use crate::cluster::ClusterModel;
use crate::error::{invalid, Error, Result};
use crate::lstm::LstmParams;
use crate::ranked::{rank_order, RankedList, Scored};
use crate::sparse::{partition_bins, SparseBins, DEFAULT_BIN_BOUNDARIES};
use crate::vecmath::dot;

pub const DEFAULT_STAGE1_N: usize = 32;
pub const DEFAULT_CLUSTER_BINS: usize = 6;
pub const DEFAULT_THETA: f64 = 0.02;

/// How Stage I orders candidate clusters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage1Order {
    /// Multikey sort on sparse-overlap priority vectors.
    Overlap,
    /// Query–centroid similarity only.
    Dist,
}

impl std::str::FromStr for Stage1Order {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "overlap" => Ok(Self::Overlap),
            "dist" => Ok(Self::Dist),
            other => Err(format!(
                "unknown stage-1 order `{other}` (expected overlap or dist)"
            )),
        }
    }
}

impl std::fmt::Display for Stage1Order {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Overlap => "overlap",
            Self::Dist => "dist",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectorConfig {
    /// Stage-I candidate count.
    pub n: usize,
    /// Cluster bins for the inter-cluster similarity features.
    pub u: usize,
    pub theta: f64,
    /// Sparse rank cut points; their count is `v`.
    pub bin_boundaries: Vec<usize>,
    pub order: Stage1Order,
}

impl Default for SelectorConfig {
    fn default() -> Self {
        Self {
            n: DEFAULT_STAGE1_N,
            u: DEFAULT_CLUSTER_BINS,
            theta: DEFAULT_THETA,
            bin_boundaries: DEFAULT_BIN_BOUNDARIES.to_vec(),
            order: Stage1Order::Overlap,
        }
    }
}

impl SelectorConfig {
    pub fn v(&self) -> usize {
        self.bin_boundaries.len()
    }

    pub fn input_dim(&self) -> usize {
        feature_width(self.u, self.v())
    }

    /// Sparse retrieval depth implied by the last bin boundary.
    pub fn depth(&self) -> usize {
        self.bin_boundaries.last().copied().unwrap_or(0)
    }

    pub fn validate(&self, num_clusters: usize) -> Result<()> {
        if self.n == 0 || self.n > num_clusters {
            return Err(invalid(format!(
                "stage-1 candidate count n = {} must be in 1..={num_clusters}",
                self.n
            )));
        }
        if self.u == 0 {
            return Err(invalid("cluster bin count u must be at least 1"));
        }
        // anything above 1 is accepted and simply selects nothing
        if self.theta.is_nan() || self.theta < 0.0 {
            return Err(invalid(format!(
                "theta = {} must be non-negative",
                self.theta
            )));
        }
        let b = &self.bin_boundaries;
        if b.is_empty() || b[0] == 0 || b.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid(format!(
                "bin boundaries must be strictly ascending, got {b:?}"
            )));
        }
        Ok(())
    }
}

pub fn feature_width(u: usize, v: usize) -> usize {
    1 + u + 2 * v
}

/// Overlap counts `P(C, B_j)` of one cluster with every sparse bin.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct PriorityVector {
    pub counts: Vec<u32>,
}

/// Priority vectors of every cluster that holds at least one sparse result.
pub fn priority_vectors(model: &ClusterModel, bins: &SparseBins) -> HashMap<u32, PriorityVector> {
    let v = bins.num_bins();
    let mut out: HashMap<u32, PriorityVector> = HashMap::new();
    for (j, e) in bins.iter() {
        let c = model.cluster_of(e.doc_id);
        out.entry(c)
            .or_insert_with(|| PriorityVector { counts: vec![0; v] })
            .counts[j] += 1;
    }
    out
}

/// Stage I: the `n` clusters with the lexicographically largest priority
/// vectors; ties go to the higher query–centroid similarity, then lower id.
pub fn stage1_rank(model: &ClusterModel, bins: &SparseBins, query: &[f32], n: usize) -> Vec<u32> {
    let pv = priority_vectors(model, bins);
    let mut touched: Vec<(u32, &PriorityVector, f64)> = pv
        .iter()
        .map(|(&c, p)| (c, p, dot(query, model.centroid(c))))
        .collect();
    touched.sort_by(|a, b| {
        b.1.counts
            .cmp(&a.1.counts)
            .then_with(|| rank_order(&Scored::new(a.0, a.2), &Scored::new(b.0, b.2)))
    });
    let mut order: Vec<u32> = touched.iter().take(n).map(|t| t.0).collect();
    if order.len() < n {
        // clusters without overlap all tie on an all-zero priority vector
        for c in model.clusters_by_similarity(query) {
            if order.len() == n {
                break;
            }
            if !pv.contains_key(&c) {
                order.push(c);
            }
        }
    }
    order
}

/// The `n` clusters with the highest query–centroid similarity.
pub fn sort_by_dist(model: &ClusterModel, query: &[f32], n: usize) -> Vec<u32> {
    let mut order = model.clusters_by_similarity(query);
    order.truncate(n);
    order
}

pub fn stage1(
    model: &ClusterModel,
    bins: &SparseBins,
    query: &[f32],
    n: usize,
    order: Stage1Order,
) -> Vec<u32> {
    match order {
        Stage1Order::Overlap => stage1_rank(model, bins, query, n),
        Stage1Order::Dist => sort_by_dist(model, query, n),
    }
}

/// Positions `0..n` split into `u` consecutive near-equal bins, earlier bins
/// taking the remainder.
pub fn cluster_bins(n: usize, u: usize) -> Vec<Range<usize>> {
    let (base, extra) = (n / u, n % u);
    let mut start = 0;
    (0..u)
        .map(|j| {
            let len = base + usize::from(j < extra);
            let r = start..start + len;
            start += len;
            r
        })
        .collect()
}

/// Stage-II description of one candidate cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterFeatures {
    pub cluster_id: u32,
    /// Query–centroid similarity.
    pub sim_q: f64,
    /// Mean centroid similarity to the clusters of each cluster bin.
    pub avg_dist: Vec<f64>,
    /// Overlap count with each sparse bin.
    pub p_counts: Vec<u32>,
    /// Mean sparse score of the overlapping documents per sparse bin.
    pub q_scores: Vec<f64>,
}

impl ClusterFeatures {
    pub fn width(&self) -> usize {
        1 + self.avg_dist.len() + self.p_counts.len() + self.q_scores.len()
    }
}

pub fn extract_features(
    model: &ClusterModel,
    bins: &SparseBins,
    query: &[f32],
    stage1_order: &[u32],
    u: usize,
) -> Vec<ClusterFeatures> {
    extract_features_counted(model, bins, query, stage1_order, u).0
}

/// Feature extraction plus an abstract operation count (neighbor entries
/// visited, sparse entries bucketed and feature slots written).
pub fn extract_features_counted(
    model: &ClusterModel,
    bins: &SparseBins,
    query: &[f32],
    stage1_order: &[u32],
    u: usize,
) -> (Vec<ClusterFeatures>, u64) {
    let n = stage1_order.len();
    let v = bins.num_bins();
    let mut ops = 0u64;
    let pos: HashMap<u32, usize> = stage1_order
        .iter()
        .enumerate()
        .map(|(p, &c)| (c, p))
        .collect();
    let cbins = cluster_bins(n, u);
    let mut bin_of_pos = vec![0usize; n];
    for (j, r) in cbins.iter().enumerate() {
        for p in r.clone() {
            bin_of_pos[p] = j;
        }
    }

    let mut p_counts = vec![vec![0u32; v]; n];
    let mut q_sums = vec![vec![0.0f64; v]; n];
    for (j, e) in bins.iter() {
        ops += 1;
        if let Some(&p) = pos.get(&model.cluster_of(e.doc_id)) {
            p_counts[p][j] += 1;
            q_sums[p][j] += e.score;
        }
    }

    let mut out = Vec::with_capacity(n);
    for (p, &c) in stage1_order.iter().enumerate() {
        let centroid = model.centroid(c);
        let mut sums = vec![0.0f64; u];
        sums[bin_of_pos[p]] += dot(centroid, centroid);
        for &(l, sim) in model.neighbors(c) {
            ops += 1;
            if let Some(&lp) = pos.get(&l) {
                sums[bin_of_pos[lp]] += sim as f64;
            }
        }
        let avg_dist: Vec<f64> = sums
            .iter()
            .zip(&cbins)
            .map(|(s, r)| {
                if r.is_empty() {
                    0.0
                } else {
                    s / r.len() as f64
                }
            })
            .collect();
        let q_scores: Vec<f64> = q_sums[p]
            .iter()
            .zip(&p_counts[p])
            .map(|(&s, &cnt)| if cnt == 0 { 0.0 } else { s / cnt as f64 })
            .collect();
        ops += (1 + u + 2 * v) as u64;
        out.push(ClusterFeatures {
            cluster_id: c,
            sim_q: dot(query, centroid),
            avg_dist,
            p_counts: std::mem::take(&mut p_counts[p]),
            q_scores,
        });
    }
    (out, ops)
}

/// Flattens features into the LSTM input sequence (`n × (1+u+2v)`).
///
/// Query similarity is min-max scaled over the `n` candidates, overlap counts
/// are divided by the rank width of their sparse bin and overlap scores by the
/// query's best sparse score, so every input stays on a unit scale regardless
/// of retrieval depth or sparse weighting.
pub fn encode_features(
    features: &[ClusterFeatures],
    bins: &SparseBins,
    top_sparse_score: f64,
) -> Vec<f64> {
    let widths = bins.widths();
    let score_scale = if top_sparse_score > 0.0 {
        1.0 / top_sparse_score
    } else {
        0.0
    };
    let sim = crate::fusion::MinMax::of(features.iter().map(|f| f.sim_q));
    let mut seq = Vec::with_capacity(features.first().map_or(0, |f| f.width()) * features.len());
    for f in features {
        seq.push(sim.map_or(0.0, |m| m.apply(f.sim_q)));
        seq.extend_from_slice(&f.avg_dist);
        seq.extend(
            f.p_counts
                .iter()
                .zip(&widths)
                .map(|(&c, &w)| c as f64 / w as f64),
        );
        seq.extend(f.q_scores.iter().map(|&q| q * score_scale));
    }
    seq
}

/// Stage II: clusters whose LSTM score reaches `theta`, in Stage-I order.
pub fn select_clusters(
    lstm: &LstmParams,
    features: &[ClusterFeatures],
    encoded: &[f64],
    theta: f64,
) -> Result<Vec<u32>> {
    let scores = lstm.forward(encoded)?;
    if scores.len() != features.len() {
        return Err(Error::DimensionMismatch {
            expected: features.len(),
            found: scores.len(),
        });
    }
    Ok(features
        .iter()
        .zip(&scores)
        .filter(|(_, &s)| s >= theta)
        .map(|(f, _)| f.cluster_id)
        .collect())
}

/// Everything computed for one query by the two-stage selector.
#[derive(Debug, Clone)]
pub struct Selection {
    pub stage1: Vec<u32>,
    pub scores: Vec<f64>,
    pub selected: Vec<u32>,
}

/// Runs Stage I and Stage II for one query from its sparse results.
pub fn select_for_query(
    model: &ClusterModel,
    lstm: &LstmParams,
    config: &SelectorConfig,
    sparse: &RankedList,
    query: &[f32],
) -> Result<Selection> {
    let (features, encoded, stage1_order) = stage2_inputs(model, config, sparse, query)?;
    let scores = lstm.forward(&encoded)?;
    let selected = stage1_order
        .iter()
        .zip(&scores)
        .filter(|(_, &s)| s >= config.theta)
        .map(|(&c, _)| c)
        .collect();
    debug_assert_eq!(features.len(), scores.len());
    Ok(Selection {
        stage1: stage1_order,
        scores,
        selected,
    })
}

/// Bins the sparse list, runs Stage I and builds the encoded feature sequence.
pub fn stage2_inputs(
    model: &ClusterModel,
    config: &SelectorConfig,
    sparse: &RankedList,
    query: &[f32],
) -> Result<(Vec<ClusterFeatures>, Vec<f64>, Vec<u32>)> {
    let boundaries = crate::sparse::boundaries_for_depth(
        &config.bin_boundaries,
        config.depth().max(sparse.len()),
    );
    let bins = partition_bins(sparse, &boundaries)?;
    let order = stage1(
        model,
        &bins,
        query,
        config.n.min(model.num_clusters()),
        config.order,
    );
    let features = extract_features(model, &bins, query, &order, config.u);
    let top = sparse.entries().first().map_or(0.0, |e| e.score);
    let encoded = encode_features(&features, &bins, top);
    Ok((features, encoded, order))
}

/// Smallest threshold whose mean selection count over `score_lists` does not
/// exceed `target_avg`. Returns a value above every score when even the
/// single best cluster per list overshoots.
pub fn theta_for_budget(score_lists: &[Vec<f64>], target_avg: f64) -> f64 {
    if score_lists.is_empty() {
        return 0.0;
    }
    let mut all: Vec<f64> = score_lists.iter().flatten().copied().collect();
    all.sort_by(|a, b| b.total_cmp(a));
    let cap = (target_avg * score_lists.len() as f64 + 1e-9).floor() as usize;
    if cap >= all.len() {
        return 0.0;
    }
    // walk down distinct values while the count of scores >= value stays within cap
    let mut theta = next_up(all[0]);
    let mut i = 0;
    while i < all.len() {
        let v = all[i];
        let mut j = i;
        while j < all.len() && all[j] == v {
            j += 1;
        }
        if j > cap {
            break;
        }
        theta = v;
        i = j;
    }
    theta
}

fn next_up(x: f64) -> f64 {
    if x.is_nan() || x == f64::INFINITY {
        return x;
    }
    let bits = x.to_bits();
    let next = if x == 0.0 {
        1
    } else if x > 0.0 {
        bits + 1
    } else {
        bits - 1
    };
    f64::from_bits(next)
}

pub fn mean_selected(score_lists: &[Vec<f64>], theta: f64) -> f64 {
    if score_lists.is_empty() {
        return 0.0;
    }
    let total: usize = score_lists
        .iter()
        .map(|s| s.iter().filter(|&&x| x >= theta).count())
        .sum();
    total as f64 / score_lists.len() as f64
}
