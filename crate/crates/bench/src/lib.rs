//! Shared fixtures for the criterion benchmarks.

use clusd_core::cluster::{build_neighbor_graph, kmeans_fit, ClusterModel};
use clusd_core::corpus::{generate_synthetic, Corpus, QuerySet, SynthConfig};
use clusd_core::lstm::LstmParams;
use clusd_core::selector::SelectorConfig;
use clusd_core::sparse::{boundaries_for_depth, InvertedIndex};

pub const DEPTH: usize = 1000;

/// A mid-sized synthetic collection, indexed and clustered, with an
/// untrained selector of the production shape.
pub struct Fixture {
    pub corpus: Corpus,
    pub queries: QuerySet,
    pub index: InvertedIndex,
    pub model: ClusterModel,
    pub selector: SelectorConfig,
    pub lstm: LstmParams,
}

impl Fixture {
    pub fn new(num_docs: usize, num_clusters: usize) -> Self {
        let cfg = SynthConfig {
            num_docs,
            num_queries: 64,
            vocab_size: 20_000,
            sparse_terms_per_doc: 64,
            ..SynthConfig::default()
        };
        let (corpus, queries, _) = generate_synthetic(&cfg).expect("valid synthetic config");
        let index = InvertedIndex::build(&corpus);
        let model = kmeans_fit(&corpus, num_clusters, 10, 1).expect("enough documents");
        let model = build_neighbor_graph(model, num_clusters / 2);
        let mut selector = SelectorConfig::default();
        selector.bin_boundaries = boundaries_for_depth(&selector.bin_boundaries, DEPTH);
        let lstm = LstmParams::init(selector.input_dim(), 32, 1);
        Self {
            corpus,
            queries,
            index,
            model,
            selector,
            lstm,
        }
    }
}
