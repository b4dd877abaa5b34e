//! K-means clustering of document embeddings, the centroid neighbor graph,
//! exhaustive dense search and the IVF top-clusters baseline.
//!
//! All similarities are dot products: query–doc, query–centroid and
//! centroid–centroid.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::Corpus;
use crate::error::{invalid, Error, Result};
use crate::ranked::{rank_order, RankedList, Scored, TopK};
use crate::vecmath::{dot, squared_distance};

pub const CLUSTER_MAGIC: &[u8; 4] = b"CLSC";
const CLUSTER_VERSION: u32 = 1;

pub const DEFAULT_MAX_ITERS: usize = 25;
/// Neighbors kept per cluster in the centroid graph.
pub const DEFAULT_NEIGHBORS: usize = 128;

/// Result of Lloyd's algorithm on a flat row-major matrix.
#[derive(Debug, Clone)]
pub struct Lloyd {
    pub centroids: Vec<f64>,
    pub assignment: Vec<u32>,
    /// Objective (sum of squared distances) after each assignment step.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
}

/// Lloyd's algorithm with k-means++ seeding. Empty clusters are repaired by
/// moving the farthest member of the largest cluster into them.
pub fn lloyd(data: &[f32], dim: usize, k: usize, max_iters: usize, seed: u64) -> Result<Lloyd> {
    if dim == 0 || data.len() % dim != 0 {
        return Err(invalid("data length is not a multiple of the dimension"));
    }
    let n = data.len() / dim;
    if k == 0 || k > n {
        return Err(invalid(format!("cluster count {k} must be in 1..={n}")));
    }
    let point = |i: usize| &data[i * dim..(i + 1) * dim];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = kmeans_pp(data, dim, k, &mut rng);

    let mut assignment = vec![u32::MAX; n];
    let mut trace = Vec::new();
    let mut iterations = 0;
    for iter in 0..max_iters.max(1) {
        iterations = iter + 1;
        let mut changed = 0usize;
        let mut objective = 0.0;
        for (i, slot) in assignment.iter_mut().enumerate() {
            let x = point(i);
            let (mut best, mut best_d) = (usize::MAX, f64::INFINITY);
            for c in 0..k {
                let d = squared_distance(x, &centroids[c * dim..(c + 1) * dim]);
                if d < best_d {
                    best = c;
                    best_d = d;
                }
            }
            let old = *slot as usize;
            if old < k && old != best {
                // keep the current cluster on exact ties
                let d_old = squared_distance(x, &centroids[old * dim..(old + 1) * dim]);
                if d_old <= best_d {
                    best = old;
                    best_d = d_old;
                }
            }
            if best != old {
                changed += 1;
                *slot = best as u32;
            }
            objective += best_d;
        }
        trace.push(objective);
        if iter > 0 && changed == 0 {
            break;
        }
        update_centroids(data, dim, k, &mut assignment, &mut centroids);
    }
    Ok(Lloyd {
        centroids,
        assignment,
        objective_trace: trace,
        iterations,
    })
}

fn kmeans_pp(data: &[f32], dim: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = data.len() / dim;
    let point = |i: usize| &data[i * dim..(i + 1) * dim];
    let mut centroids = Vec::with_capacity(k * dim);
    let first = rng.random_range(0..n);
    centroids.extend(point(first).iter().map(|&x| x as f64));
    let mut nearest: Vec<f64> = (0..n)
        .map(|i| squared_distance(point(i), &centroids[0..dim]))
        .collect();
    for c in 1..k {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &d) in nearest.iter().enumerate() {
                if d > 0.0 && target < d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            while nearest[chosen] == 0.0 {
                chosen -= 1;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centroids.extend(point(pick).iter().map(|&x| x as f64));
        let new_c = &centroids[c * dim..(c + 1) * dim];
        for (i, slot) in nearest.iter_mut().enumerate() {
            let d = squared_distance(point(i), new_c);
            if d < *slot {
                *slot = d;
            }
        }
    }
    centroids
}

fn mean_of(data: &[f32], dim: usize, members: &[usize]) -> Vec<f64> {
    let mut m = vec![0.0f64; dim];
    for &i in members {
        for (acc, &x) in m.iter_mut().zip(&data[i * dim..(i + 1) * dim]) {
            *acc += x as f64;
        }
    }
    let inv = 1.0 / members.len() as f64;
    m.iter_mut().for_each(|v| *v *= inv);
    m
}

fn update_centroids(
    data: &[f32],
    dim: usize,
    k: usize,
    assignment: &mut [u32],
    centroids: &mut [f64],
) {
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &c) in assignment.iter().enumerate() {
        members[c as usize].push(i);
    }
    for c in 0..k {
        if !members[c].is_empty() {
            let m = mean_of(data, dim, &members[c]);
            centroids[c * dim..(c + 1) * dim].copy_from_slice(&m);
        }
    }
    for empty in 0..k {
        if !members[empty].is_empty() {
            continue;
        }
        let largest = (0..k)
            .max_by(|&a, &b| members[a].len().cmp(&members[b].len()).then(b.cmp(&a)))
            .unwrap();
        if members[largest].len() < 2 {
            continue;
        }
        let center = centroids[largest * dim..(largest + 1) * dim].to_vec();
        let (pos, _) = members[largest]
            .iter()
            .enumerate()
            .map(|(p, &i)| (p, squared_distance(&data[i * dim..(i + 1) * dim], &center)))
            .fold((0, f64::NEG_INFINITY), |best, cur| {
                if cur.1 > best.1 {
                    cur
                } else {
                    best
                }
            });
        let moved = members[largest].remove(pos);
        assignment[moved] = empty as u32;
        members[empty].push(moved);
        for (dst, &x) in centroids[empty * dim..(empty + 1) * dim]
            .iter_mut()
            .zip(&data[moved * dim..(moved + 1) * dim])
        {
            *dst = x as f64;
        }
        let m = mean_of(data, dim, &members[largest]);
        centroids[largest * dim..(largest + 1) * dim].copy_from_slice(&m);
    }
}

/// Fitted clusters over a corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModel {
    dim: usize,
    centroids: Vec<f32>,
    assignment: Vec<u32>,
    members: Vec<Vec<u32>>,
    neighbors: Vec<Vec<(u32, f32)>>,
    neighbor_m: usize,
}

/// A fitted model plus the objective trace of the fit.
#[derive(Debug, Clone)]
pub struct KmeansFit {
    pub model: ClusterModel,
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
}

pub fn kmeans_fit(
    corpus: &Corpus,
    num_clusters: usize,
    max_iters: usize,
    seed: u64,
) -> Result<ClusterModel> {
    kmeans_fit_traced(corpus, num_clusters, max_iters, seed).map(|f| f.model)
}

pub fn kmeans_fit_traced(
    corpus: &Corpus,
    num_clusters: usize,
    max_iters: usize,
    seed: u64,
) -> Result<KmeansFit> {
    if num_clusters > corpus.len() {
        return Err(invalid(format!(
            "cannot form {num_clusters} clusters from {} documents",
            corpus.len()
        )));
    }
    let fit = lloyd(
        corpus.dense_matrix(),
        corpus.dim(),
        num_clusters,
        max_iters,
        seed,
    )?;
    let model = ClusterModel::from_assignment(
        corpus.dim(),
        fit.centroids.iter().map(|&x| x as f32).collect(),
        fit.assignment,
    );
    Ok(KmeansFit {
        model,
        objective_trace: fit.objective_trace,
        iterations: fit.iterations,
    })
}

impl ClusterModel {
    fn from_assignment(dim: usize, centroids: Vec<f32>, assignment: Vec<u32>) -> Self {
        let n = centroids.len() / dim;
        let mut members = vec![Vec::new(); n];
        for (d, &c) in assignment.iter().enumerate() {
            members[c as usize].push(d as u32);
        }
        Self {
            dim,
            centroids,
            assignment,
            members,
            neighbors: vec![Vec::new(); n],
            neighbor_m: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_clusters(&self) -> usize {
        self.members.len()
    }

    pub fn num_docs(&self) -> usize {
        self.assignment.len()
    }

    pub fn centroid(&self, c: u32) -> &[f32] {
        let s = c as usize * self.dim;
        &self.centroids[s..s + self.dim]
    }

    pub fn centroids(&self) -> &[f32] {
        &self.centroids
    }

    pub fn cluster_of(&self, doc_id: u32) -> u32 {
        self.assignment[doc_id as usize]
    }

    pub fn assignment(&self) -> &[u32] {
        &self.assignment
    }

    pub fn members(&self, c: u32) -> &[u32] {
        &self.members[c as usize]
    }

    /// Up to `m` most similar other clusters, similarity descending.
    pub fn neighbors(&self, c: u32) -> &[(u32, f32)] {
        &self.neighbors[c as usize]
    }

    pub fn neighbor_m(&self) -> usize {
        self.neighbor_m
    }

    /// Query–centroid similarity for every cluster.
    pub fn centroid_scores(&self, query: &[f32]) -> Vec<f64> {
        self.centroids
            .chunks_exact(self.dim)
            .map(|c| dot(query, c))
            .collect()
    }

    /// Cluster ids ordered by query–centroid similarity, best first, ties by id.
    pub fn clusters_by_similarity(&self, query: &[f32]) -> Vec<u32> {
        let scores = self.centroid_scores(query);
        let mut order: Vec<Scored> = scores
            .iter()
            .enumerate()
            .map(|(c, &s)| Scored::new(c as u32, s))
            .collect();
        order.sort_by(rank_order);
        order.into_iter().map(|s| s.doc_id).collect()
    }

    /// Rebuilds the neighbor graph keeping the top `m` clusters per cluster.
    pub fn build_neighbor_graph(&mut self, m: usize) {
        let n = self.num_clusters();
        let mut graph = Vec::with_capacity(n);
        for i in 0..n {
            let ci = self.centroid(i as u32);
            let mut sims: Vec<Scored> = (0..n)
                .filter(|&j| j != i)
                .map(|j| Scored::new(j as u32, dot(ci, self.centroid(j as u32))))
                .collect();
            sims.sort_by(rank_order);
            sims.truncate(m);
            graph.push(
                sims.into_iter()
                    .map(|s| (s.doc_id, s.score as f32))
                    .collect(),
            );
        }
        self.neighbors = graph;
        self.neighbor_m = m;
    }

    /// Entries held by the neighbor graph.
    pub fn neighbor_entries(&self) -> usize {
        self.neighbors.iter().map(Vec::len).sum()
    }

    pub fn check_compatible(&self, corpus: &Corpus) -> Result<()> {
        if self.dim != corpus.dim() || self.num_docs() != corpus.len() {
            return Err(Error::Incompatible(format!(
                "cluster model covers {} docs of dim {}, corpus has {} docs of dim {}",
                self.num_docs(),
                self.dim,
                corpus.len(),
                corpus.dim()
            )));
        }
        Ok(())
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> io::Result<()> {
        w.write_all(CLUSTER_MAGIC)?;
        w.write_u32::<LE>(CLUSTER_VERSION)?;
        w.write_u32::<LE>(self.num_clusters() as u32)?;
        w.write_u32::<LE>(self.dim as u32)?;
        w.write_u32::<LE>(self.neighbor_m as u32)?;
        w.write_u64::<LE>(self.num_docs() as u64)?;
        for &x in &self.centroids {
            w.write_f32::<LE>(x)?;
        }
        for m in &self.members {
            w.write_u32::<LE>(m.len() as u32)?;
            for &d in m {
                w.write_u32::<LE>(d)?;
            }
        }
        for nb in &self.neighbors {
            w.write_u32::<LE>(nb.len() as u32)?;
            for &(c, s) in nb {
                w.write_u32::<LE>(c)?;
                w.write_f32::<LE>(s)?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != CLUSTER_MAGIC {
            return Err(Error::BadMagic {
                expected: "CLSC".into(),
                found: String::from_utf8_lossy(&magic).into_owned(),
            });
        }
        let version = r.read_u32::<LE>()?;
        if version != CLUSTER_VERSION {
            return Err(Error::UnsupportedVersion {
                expected: CLUSTER_VERSION,
                found: version,
            });
        }
        let n = r.read_u32::<LE>()? as usize;
        let dim = r.read_u32::<LE>()? as usize;
        let neighbor_m = r.read_u32::<LE>()? as usize;
        let num_docs = r.read_u64::<LE>()? as usize;
        if dim == 0 {
            return Err(Error::MalformedHeader("dimension is zero".into()));
        }
        let mut centroids = vec![0f32; n * dim];
        r.read_f32_into::<LE>(&mut centroids)?;
        let mut assignment = vec![u32::MAX; num_docs];
        let mut members = Vec::with_capacity(n);
        for c in 0..n {
            let len = r.read_u32::<LE>()? as usize;
            let mut list = Vec::with_capacity(len);
            for _ in 0..len {
                let d = r.read_u32::<LE>()?;
                if d as usize >= num_docs || assignment[d as usize] != u32::MAX {
                    return Err(Error::MalformedHeader(format!(
                        "member lists do not partition 0..{num_docs}"
                    )));
                }
                assignment[d as usize] = c as u32;
                list.push(d);
            }
            members.push(list);
        }
        if assignment.contains(&u32::MAX) {
            return Err(Error::MalformedHeader(format!(
                "member lists do not cover 0..{num_docs}"
            )));
        }
        let mut neighbors = Vec::with_capacity(n);
        for _ in 0..n {
            let len = r.read_u32::<LE>()? as usize;
            let mut list = Vec::with_capacity(len);
            for _ in 0..len {
                let c = r.read_u32::<LE>()?;
                let s = r.read_f32::<LE>()?;
                list.push((c, s));
            }
            neighbors.push(list);
        }
        Ok(Self {
            dim,
            centroids,
            assignment,
            members,
            neighbors,
            neighbor_m,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }
}

pub fn build_neighbor_graph(mut model: ClusterModel, m: usize) -> ClusterModel {
    model.build_neighbor_graph(m);
    model
}

/// Bytes needed for a neighbor graph of `n` clusters with `m` neighbors each.
pub fn neighbor_graph_bytes(n: usize, m: usize, bytes_per_entry: usize) -> usize {
    n * m.min(n.saturating_sub(1)) * bytes_per_entry
}

fn check_dim(corpus: &Corpus, query: &[f32]) -> Result<()> {
    if query.len() != corpus.dim() {
        return Err(Error::DimensionMismatch {
            expected: corpus.dim(),
            found: query.len(),
        });
    }
    Ok(())
}

/// Exact top-k by dense dot product over every document.
pub fn full_dense_search(corpus: &Corpus, query: &[f32], k: usize) -> Result<RankedList> {
    check_dim(corpus, query)?;
    let mut top = TopK::new(k);
    for (d, v) in corpus.dense_matrix().chunks_exact(corpus.dim()).enumerate() {
        top.push(d as u32, dot(query, v));
    }
    Ok(top.into_ranked())
}

/// Dense search restricted to the `budget` clusters whose centroids score
/// highest against the query. Also returns how many documents were scored.
pub fn ivf_search_counted(
    model: &ClusterModel,
    corpus: &Corpus,
    query: &[f32],
    budget: usize,
    k: usize,
) -> Result<(RankedList, usize)> {
    check_dim(corpus, query)?;
    if budget == 0 || budget > model.num_clusters() {
        return Err(invalid(format!(
            "cluster budget {budget} must be in 1..={}",
            model.num_clusters()
        )));
    }
    let mut top = TopK::new(k);
    let mut scored = 0;
    for c in model.clusters_by_similarity(query).into_iter().take(budget) {
        for &d in model.members(c) {
            top.push(d, dot(query, corpus.dense(d)));
            scored += 1;
        }
    }
    Ok((top.into_ranked(), scored))
}

pub fn ivf_search(
    model: &ClusterModel,
    corpus: &Corpus,
    query: &[f32],
    budget: usize,
    k: usize,
) -> Result<RankedList> {
    ivf_search_counted(model, corpus, query, budget, k).map(|r| r.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic, DenseVector, Document, SparseVector, SynthConfig};

    fn points(rows: &[&[f32]]) -> Corpus {
        let docs = rows
            .iter()
            .enumerate()
            .map(|(i, r)| Document {
                doc_id: i as u32,
                sparse: SparseVector::default(),
                dense: DenseVector::new(r.to_vec()).unwrap(),
            })
            .collect();
        Corpus::new(rows[0].len(), docs).unwrap()
    }

    fn synth(num_docs: usize, seed: u64) -> Corpus {
        generate_synthetic(&SynthConfig {
            num_docs,
            num_queries: 1,
            dim: 8,
            vocab_size: 50,
            num_topics: 4,
            dense_noise_sigma: 0.3,
            sparse_terms_per_doc: 4,
            relevant_per_query: 1,
            rng_seed: seed,
        })
        .unwrap()
        .0
    }

    #[test]
    fn one_cluster_per_document() {
        let c = points(&[&[0.0, 1.0], &[1.0, 0.0], &[0.5, 0.5], &[-1.0, 0.0]]);
        let fit = kmeans_fit_traced(&c, 4, 10, 3).unwrap();
        assert_eq!(*fit.objective_trace.last().unwrap(), 0.0);
        let mut seen: Vec<u32> = fit.model.assignment().to_vec();
        seen.sort_unstable();
        assert_eq!(seen, vec![0, 1, 2, 3]);
    }

    #[test]
    fn too_many_clusters_is_an_error() {
        let c = points(&[&[0.0], &[1.0]]);
        assert!(kmeans_fit(&c, 3, 10, 0).is_err());
    }

    #[test]
    fn objective_never_increases_and_centroids_are_means() {
        let corpus = synth(600, 4);
        for seed in 0..4 {
            let fit = kmeans_fit_traced(&corpus, 12, 30, seed).unwrap();
            for w in fit.objective_trace.windows(2) {
                assert!(w[1] <= w[0], "objective rose: {:?}", fit.objective_trace);
            }
            let model = &fit.model;
            for c in 0..model.num_clusters() as u32 {
                let members = model.members(c);
                assert!(!members.is_empty());
                for j in 0..corpus.dim() {
                    let mean: f64 = members
                        .iter()
                        .map(|&d| corpus.dense(d)[j] as f64)
                        .sum::<f64>()
                        / members.len() as f64;
                    assert!((mean - model.centroid(c)[j] as f64).abs() < 1e-5);
                }
            }
        }
    }

    #[test]
    fn fit_is_deterministic() {
        let corpus = synth(300, 1);
        let a = kmeans_fit(&corpus, 7, 20, 11).unwrap();
        let b = kmeans_fit(&corpus, 7, 20, 11).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn duplicate_points_still_fill_every_cluster() {
        let row: &[f32] = &[1.0, 0.0];
        let c = points(&[row; 6]);
        let model = kmeans_fit(&c, 3, 10, 5).unwrap();
        for k in 0..3 {
            assert!(!model.members(k).is_empty());
        }
    }

    #[test]
    fn two_clusters_are_each_others_neighbor() {
        let c = points(&[&[0.0, 1.0], &[1.0, 0.0], &[0.0, 0.9], &[0.9, 0.0]]);
        let model = build_neighbor_graph(kmeans_fit(&c, 2, 10, 0).unwrap(), 8);
        assert_eq!(
            model.neighbors(0).iter().map(|p| p.0).collect::<Vec<_>>(),
            vec![1]
        );
        assert_eq!(
            model.neighbors(1).iter().map(|p| p.0).collect::<Vec<_>>(),
            vec![0]
        );
    }

    #[test]
    fn graph_size_estimate() {
        // 8192 clusters x 128 neighbors x 4 bytes is about 4.2 MB
        let bytes = neighbor_graph_bytes(8192, 128, 4);
        assert_eq!(bytes, 4_194_304);
        assert!(bytes as f64 / 1e6 > 4.0 && (bytes as f64 / 1e6) < 5.5);
        // with 32-bit similarity plus 32-bit id per entry, as stored here
        assert_eq!(neighbor_graph_bytes(8192, 128, 8), 8_388_608);
    }

    #[test]
    fn dense_search_self_match_ranks_first() {
        let corpus = synth(200, 2);
        for d in [0u32, 17, 199] {
            let r = full_dense_search(&corpus, corpus.dense(d), 5).unwrap();
            assert_eq!(r.entries()[0].doc_id, d);
        }
        let all = full_dense_search(&corpus, corpus.dense(0), corpus.len()).unwrap();
        assert_eq!(all.len(), corpus.len());
        assert!(full_dense_search(&corpus, &[1.0], 3).is_err());
    }

    #[test]
    fn ivf_budget_extremes() {
        let corpus = synth(400, 3);
        let model = kmeans_fit(&corpus, 9, 20, 1).unwrap();
        let q = corpus.dense(5);
        assert_eq!(
            ivf_search(&model, &corpus, q, 9, 50).unwrap(),
            full_dense_search(&corpus, q, 50).unwrap()
        );
        let best = model.clusters_by_similarity(q)[0];
        let (r, scored) = ivf_search_counted(&model, &corpus, q, 1, 1000).unwrap();
        assert_eq!(scored, model.members(best).len());
        let mut ids: Vec<u32> = r.doc_ids().collect();
        ids.sort_unstable();
        assert_eq!(ids, model.members(best));
        assert!(ivf_search(&model, &corpus, q, 0, 5).is_err());
    }

    #[test]
    fn model_persists() {
        let corpus = synth(120, 5);
        let model = build_neighbor_graph(kmeans_fit(&corpus, 6, 10, 2).unwrap(), 3);
        let mut bytes = Vec::new();
        model.write_to(&mut bytes).unwrap();
        assert_eq!(
            ClusterModel::read_from(&mut bytes.as_slice()).unwrap(),
            model
        );
    }
}
