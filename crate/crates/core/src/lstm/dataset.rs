use std::collections::HashSet;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cluster::{full_dense_search, ClusterModel};
use crate::corpus::{Corpus, QuerySet};
use crate::error::Result;
use crate::selector::{stage2_inputs, SelectorConfig};
use crate::sparse::InvertedIndex;

/// Dense results per query that define a positive cluster.
pub const LABEL_DEPTH: usize = 10;

/// One query's Stage-I candidates with their encoded features and labels.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingInstance {
    pub query_id: u32,
    /// Row-major `n × input_dim`.
    pub features: Vec<f64>,
    /// 1.0 when the cluster holds a dense top-10 document, else 0.0.
    pub labels: Vec<f64>,
}

/// Labels `clusters` by whether they contain any of the exact dense top-10.
pub fn dense_top10_labels(
    corpus: &Corpus,
    model: &ClusterModel,
    query: &[f32],
    clusters: &[u32],
) -> Result<Vec<f64>> {
    let top = full_dense_search(corpus, query, LABEL_DEPTH)?;
    let hit: HashSet<u32> = top.doc_ids().map(|d| model.cluster_of(d)).collect();
    Ok(clusters
        .iter()
        .map(|c| f64::from(hit.contains(c)))
        .collect())
}

/// Samples up to `num_instances` queries (all of them when fewer exist) and
/// builds one training sequence per sampled query, kept in query order.
pub fn build_training_set(
    corpus: &Corpus,
    queries: &QuerySet,
    index: &InvertedIndex,
    model: &ClusterModel,
    config: &SelectorConfig,
    num_instances: usize,
    rng_seed: u64,
) -> Result<Vec<TrainingInstance>> {
    model.check_compatible(corpus)?;
    config.validate(model.num_clusters())?;
    let all = queries.queries();
    let chosen: Vec<usize> = if all.len() <= num_instances {
        if all.len() < num_instances {
            log::warn!(
                "only {} training queries available, fewer than the requested {num_instances}; using all",
                all.len()
            );
        }
        (0..all.len()).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        let mut ix = sample(&mut rng, all.len(), num_instances).into_vec();
        ix.sort_unstable();
        ix
    };
    chosen
        .into_iter()
        .map(|i| {
            let q = &all[i];
            let sparse = index.search(&q.sparse, config.depth());
            let (_, features, order) = stage2_inputs(model, config, &sparse, q.dense.as_slice())?;
            let labels = dense_top10_labels(corpus, model, q.dense.as_slice(), &order)?;
            Ok(TrainingInstance {
                query_id: q.query_id,
                features,
                labels,
            })
        })
        .collect()
}
