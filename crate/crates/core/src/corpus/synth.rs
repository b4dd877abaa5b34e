//! Deterministic synthetic corpora with planted relevance.
//!
//! Every document and query has a latent position near one of `num_topics`
//! unit-norm topic centers. A document's dense vector is its latent position.
//! A query observes its latent position through an independent Gaussian draw
//! for the dense side and through Gumbel-perturbed term sampling for the
//! sparse side, so both retrievers are informative but make different
//! mistakes. The relevant documents of a query are the same-topic documents
//! closest to its latent position.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::format::quantize_weight;
use super::{Corpus, DenseVector, Qrels, QueryRecord, QuerySet, SparseVector};
use crate::error::{invalid, Result};
use crate::kv::KvMap;
use crate::vecmath::normalize;

/// Scale applied to term/latent affinity before Gumbel sampling.
const TERM_SHARPNESS: f64 = 1000.0;
/// Sparse weight = floor + scale * max(affinity, 0).
const WEIGHT_FLOOR: f64 = 0.1;
const WEIGHT_SCALE: f64 = 2.0;
/// The dense query view is noisier than the document view by this factor of
/// `dense_noise_sigma`.
const QUERY_OBSERVATION_NOISE: f64 = 0.3;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub num_docs: usize,
    pub num_queries: usize,
    pub dim: usize,
    pub vocab_size: usize,
    pub num_topics: usize,
    pub dense_noise_sigma: f64,
    pub sparse_terms_per_doc: usize,
    pub relevant_per_query: usize,
    pub rng_seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_docs: 50_000,
            num_queries: 700,
            dim: 64,
            vocab_size: 60_000,
            num_topics: 20,
            dense_noise_sigma: 0.12,
            sparse_terms_per_doc: 128,
            relevant_per_query: 1,
            rng_seed: 1,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("num_docs", self.num_docs),
            ("num_queries", self.num_queries),
            ("dim", self.dim),
            ("vocab_size", self.vocab_size),
            ("num_topics", self.num_topics),
            ("sparse_terms_per_doc", self.sparse_terms_per_doc),
            ("relevant_per_query", self.relevant_per_query),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(invalid(format!("{name} must be at least 1")));
        }
        if !(self.dense_noise_sigma >= 0.0 && self.dense_noise_sigma.is_finite()) {
            return Err(invalid("dense_noise_sigma must be a finite value >= 0"));
        }
        if self.vocab_size > u32::MAX as usize || self.num_docs > u32::MAX as usize {
            return Err(invalid("counts must fit in 32-bit ids"));
        }
        Ok(())
    }

    /// Reads the known keys from `kv`, falling back to defaults.
    pub fn from_kv(kv: &KvMap) -> Result<Self> {
        let d = Self::default();
        let cfg = Self {
            num_docs: kv.get_or("num_docs", d.num_docs)?,
            num_queries: kv.get_or("num_queries", d.num_queries)?,
            dim: kv.get_or("dim", d.dim)?,
            vocab_size: kv.get_or("vocab_size", d.vocab_size)?,
            num_topics: kv.get_or("num_topics", d.num_topics)?,
            dense_noise_sigma: kv.get_or("dense_noise_sigma", d.dense_noise_sigma)?,
            sparse_terms_per_doc: kv.get_or("sparse_terms_per_doc", d.sparse_terms_per_doc)?,
            relevant_per_query: kv.get_or("relevant_per_query", d.relevant_per_query)?,
            rng_seed: kv.get_or("rng_seed", d.rng_seed)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_kv(&self) -> KvMap {
        let mut kv = KvMap::new();
        kv.set("num_docs", self.num_docs);
        kv.set("num_queries", self.num_queries);
        kv.set("dim", self.dim);
        kv.set("vocab_size", self.vocab_size);
        kv.set("num_topics", self.num_topics);
        kv.set("dense_noise_sigma", self.dense_noise_sigma);
        kv.set("sparse_terms_per_doc", self.sparse_terms_per_doc);
        kv.set("relevant_per_query", self.relevant_per_query);
        kv.set("rng_seed", self.rng_seed);
        kv
    }
}

/// Generator output including the planted topic labels.
#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub corpus: Corpus,
    pub queries: QuerySet,
    pub qrels: Qrels,
    pub doc_topics: Vec<u32>,
    pub query_topics: Vec<u32>,
}

pub fn generate_synthetic(config: &SynthConfig) -> Result<(Corpus, QuerySet, Qrels)> {
    let out = generate_synthetic_labeled(config)?;
    Ok((out.corpus, out.queries, out.qrels))
}

fn gaussian_unit(rng: &mut ChaCha8Rng, center: Option<&[f64]>, sigma: f64, dim: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..dim)
        .map(|i| {
            let g: f64 = rng.sample(StandardNormal);
            center.map_or(0.0, |c| c[i]) + sigma * g
        })
        .collect();
    normalize(&mut v);
    v
}

struct TermModel {
    dim: usize,
    embeddings: Vec<f64>,
    pools: Vec<Vec<u32>>,
    everything: Vec<u32>,
}

impl TermModel {
    fn pool(&self, topic: usize) -> &[u32] {
        if self.pools[topic].is_empty() {
            &self.everything
        } else {
            &self.pools[topic]
        }
    }

    /// Gumbel-top-k sampling from softmax(sharpness * affinity) over the pool.
    fn sample(
        &self,
        latent: &[f64],
        topic: usize,
        count: usize,
        rng: &mut ChaCha8Rng,
    ) -> SparseVector {
        let pool = self.pool(topic);
        let mut keyed: Vec<(f64, u32, f64)> = pool
            .iter()
            .map(|&t| {
                let e = &self.embeddings[t as usize * self.dim..(t as usize + 1) * self.dim];
                let aff: f64 = e.iter().zip(latent).map(|(a, b)| a * b).sum();
                let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
                let gumbel = -(-u.ln()).ln();
                (TERM_SHARPNESS * aff + gumbel, t, aff)
            })
            .collect();
        let order =
            |a: &(f64, u32, f64), b: &(f64, u32, f64)| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1));
        if count < keyed.len() {
            keyed.select_nth_unstable_by(count, order);
            keyed.truncate(count);
        }
        let mut entries: Vec<(u32, f32)> = keyed
            .into_iter()
            .map(|(_, t, aff)| {
                (
                    t,
                    quantize_weight((WEIGHT_FLOOR + WEIGHT_SCALE * aff.max(0.0)) as f32),
                )
            })
            .collect();
        entries.sort_by_key(|e| e.0);
        SparseVector::from_validated(entries)
    }
}

pub fn generate_synthetic_labeled(config: &SynthConfig) -> Result<SynthOutput> {
    config.validate()?;
    let SynthConfig {
        num_docs,
        num_queries,
        dim,
        vocab_size,
        num_topics,
        dense_noise_sigma: sigma,
        sparse_terms_per_doc,
        relevant_per_query,
        rng_seed,
    } = *config;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);

    let centers: Vec<Vec<f64>> = (0..num_topics)
        .map(|_| gaussian_unit(&mut rng, None, 1.0, dim))
        .collect();

    let mut embeddings = Vec::with_capacity(vocab_size * dim);
    let mut pools = vec![Vec::new(); num_topics];
    for t in 0..vocab_size {
        let home = t % num_topics;
        embeddings.extend(gaussian_unit(&mut rng, Some(&centers[home]), sigma, dim));
        pools[home].push(t as u32);
    }
    let terms = TermModel {
        dim,
        embeddings,
        pools,
        everything: (0..vocab_size as u32).collect(),
    };

    let mut doc_topics = Vec::with_capacity(num_docs);
    let mut sparse = Vec::with_capacity(num_docs);
    let mut dense = Vec::with_capacity(num_docs * dim);
    for _ in 0..num_docs {
        let topic = rng.random_range(0..num_topics);
        let latent = gaussian_unit(&mut rng, Some(&centers[topic]), sigma, dim);
        sparse.push(terms.sample(&latent, topic, sparse_terms_per_doc, &mut rng));
        dense.extend(latent.iter().map(|&x| x as f32));
        doc_topics.push(topic as u32);
    }
    let corpus = Corpus::from_parts(dim, sparse, dense);

    let mut by_topic: Vec<Vec<u32>> = vec![Vec::new(); num_topics];
    for (d, &t) in doc_topics.iter().enumerate() {
        by_topic[t as usize].push(d as u32);
    }

    let mut queries = Vec::with_capacity(num_queries);
    let mut query_topics = Vec::with_capacity(num_queries);
    let mut qrels = Qrels::new();
    for qid in 0..num_queries as u32 {
        let topic = rng.random_range(0..num_topics);
        let latent = gaussian_unit(&mut rng, Some(&centers[topic]), sigma, dim);
        let observed = gaussian_unit(
            &mut rng,
            Some(&latent),
            sigma * QUERY_OBSERVATION_NOISE,
            dim,
        );
        let q_sparse = terms.sample(&latent, topic, sparse_terms_per_doc, &mut rng);

        let members = &by_topic[topic];
        if relevant_per_query > members.len() {
            return Err(invalid(format!(
                "relevant_per_query = {relevant_per_query} exceeds the {} documents of topic {topic}",
                members.len()
            )));
        }
        let mut scored: Vec<(f64, u32)> = members
            .iter()
            .map(|&d| {
                let v = corpus.dense(d);
                (v.iter().zip(&latent).map(|(a, b)| *a as f64 * b).sum(), d)
            })
            .collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        for &(_, d) in scored.iter().take(relevant_per_query) {
            qrels.insert(qid, d, 1);
        }

        queries.push(QueryRecord {
            query_id: qid,
            sparse: q_sparse,
            dense: DenseVector(observed.iter().map(|&x| x as f32).collect()),
        });
        query_topics.push(topic as u32);
    }

    Ok(SynthOutput {
        corpus,
        queries: QuerySet::new(dim, queries)?,
        qrels,
        doc_topics,
        query_topics,
    })
}
