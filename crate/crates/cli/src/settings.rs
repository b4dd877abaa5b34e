//! Layered `key=value` configuration.
//!
//! Values are resolved in layers, later ones winning: built-in defaults,
//! then the selector layout saved by `train` (search and bench only), then the
//! file given by `--config`, then command-line flags. Keys starting with
//! `manifest.` are ignored when a file is loaded, so a run manifest can be fed
//! back in as a config file.

use std::path::Path;

use clusd_core::corpus::SynthConfig;
use clusd_core::eval::{PipelineConfig, PipelineKind};
use clusd_core::fusion::FusionConfig;
use clusd_core::kv::KvMap;
use clusd_core::lstm::TrainConfig;
use clusd_core::selector::{SelectorConfig, Stage1Order};
use clusd_core::sparse::{boundaries_for_depth, DEFAULT_BIN_BOUNDARIES, DEFAULT_DEPTH};
use clusd_core::storage::DEFAULT_PER_OP_OVERHEAD;
use clusd_core::Error;

use crate::failure::Failure;

pub const MANIFEST_PREFIX: &str = "manifest.";

/// Build-stage settings that have no home in the core crate.
pub const DEFAULT_NUM_CLUSTERS: usize = 256;
pub const DEFAULT_KMEANS_ITERS: usize = 25;
pub const DEFAULT_NEIGHBORS: usize = 128;
pub const DEFAULT_TRAIN_QUERIES: usize = 500;

const KNOWN_KEYS: &[&str] = &[
    "seed",
    // synthesis
    "num_docs",
    "num_queries",
    "dim",
    "vocab_size",
    "num_topics",
    "dense_noise_sigma",
    "sparse_terms_per_doc",
    "relevant_per_query",
    "rng_seed",
    // build
    "num_clusters",
    "kmeans_iters",
    "neighbors",
    "cluster_seed",
    "pq_subspaces",
    "pq_seed",
    "disk_store",
    // training
    "epochs",
    "learning_rate",
    "batch_size",
    "clip_norm",
    "hidden_dim",
    "train_seed",
    "num_instances",
    "train_queries",
    "stage1_n",
    "cluster_bins",
    "stage1_order",
    "bin_boundaries",
    // retrieval
    "k",
    "pipeline",
    "alpha",
    "impute_factor",
    "theta",
    "target_clusters",
    "ivf_budget",
    "repetitions",
    "mode",
    "per_op_overhead",
    "coalesce",
];

#[derive(Debug, Clone, Default)]
pub struct Settings {
    kv: KvMap,
}

impl Settings {
    /// Overlays the optional config file and then `flags` on `base`.
    pub fn resolve(base: &KvMap, config: Option<&Path>, flags: &KvMap) -> Result<Self, Failure> {
        let mut kv = base.clone();
        if let Some(path) = config {
            if !path.is_file() {
                return Err(Failure::missing(path));
            }
            for (key, value) in KvMap::load(path)?.iter() {
                if !key.starts_with(MANIFEST_PREFIX) {
                    kv.set(key, value);
                }
            }
        }
        kv.merge(flags);
        if let Some((key, _)) = kv.iter().find(|(k, _)| !KNOWN_KEYS.contains(k)) {
            return Err(Error::Config {
                key: key.to_string(),
                msg: "unknown configuration key".into(),
            }
            .into());
        }
        Ok(Self { kv })
    }

    /// Value of a per-stage seed key, falling back to the shared `seed`.
    fn seed(&self, key: &str) -> Result<u64, Failure> {
        let shared = self.kv.get_or("seed", 1u64)?;
        Ok(self.kv.get_or(key, shared)?)
    }

    pub fn synth(&self) -> Result<SynthConfig, Failure> {
        let mut kv = self.kv.clone();
        kv.set("rng_seed", self.seed("rng_seed")?);
        Ok(SynthConfig::from_kv(&kv)?)
    }

    pub fn build(&self) -> Result<BuildSettings, Failure> {
        let b = BuildSettings {
            num_clusters: self.kv.get_or("num_clusters", DEFAULT_NUM_CLUSTERS)?,
            kmeans_iters: self.kv.get_or("kmeans_iters", DEFAULT_KMEANS_ITERS)?,
            neighbors: self.kv.get_or("neighbors", DEFAULT_NEIGHBORS)?,
            cluster_seed: self.seed("cluster_seed")?,
            pq_subspaces: self.kv.get_or("pq_subspaces", 0usize)?,
            pq_seed: self.seed("pq_seed")?,
            disk_store: self.kv.get_or("disk_store", true)?,
        };
        if b.num_clusters == 0 || b.kmeans_iters == 0 {
            return Err(Failure::new(
                "invalid_argument",
                "num_clusters and kmeans_iters must be at least 1",
            ));
        }
        Ok(b)
    }

    pub fn train(&self) -> Result<TrainConfig, Failure> {
        let mut kv = self.kv.clone();
        kv.set("train_seed", self.seed("train_seed")?);
        let cfg = TrainConfig::from_kv(&kv)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn train_queries(&self) -> Result<usize, Failure> {
        Ok(self.kv.get_or("train_queries", DEFAULT_TRAIN_QUERIES)?)
    }

    pub fn depth(&self) -> Result<usize, Failure> {
        let k = self.kv.get_or("k", DEFAULT_DEPTH)?;
        if k == 0 {
            return Err(Failure::new("invalid_argument", "k must be at least 1"));
        }
        Ok(k)
    }

    /// Selector layout. Without explicit `bin_boundaries` the default cut
    /// points are fitted to the retrieval depth; explicit ones are kept as
    /// given so a trained selector keeps its input width at any depth.
    pub fn selector(&self) -> Result<SelectorConfig, Failure> {
        let d = SelectorConfig::default();
        let boundaries = match self.kv.get_list::<usize>("bin_boundaries")? {
            Some(b) => b,
            None => boundaries_for_depth(&DEFAULT_BIN_BOUNDARIES, self.depth()?),
        };
        if boundaries.is_empty() {
            return Err(Failure::new(
                "invalid_argument",
                "bin_boundaries must not be empty",
            ));
        }
        Ok(SelectorConfig {
            n: self.kv.get_or("stage1_n", d.n)?,
            u: self.kv.get_or("cluster_bins", d.u)?,
            theta: self.kv.get_or("theta", d.theta)?,
            bin_boundaries: boundaries,
            order: self.kv.get_or::<Stage1Order>("stage1_order", d.order)?,
        })
    }

    pub fn pipeline_kind(&self) -> Result<Option<PipelineKind>, Failure> {
        Ok(self.kv.get::<PipelineKind>("pipeline")?)
    }

    /// Pipeline settings shared by `search` and `bench`. The IVF budget is
    /// left at 1 when it is `auto`; the caller fills it in.
    pub fn pipeline(&self, kind: PipelineKind) -> Result<PipelineConfig, Failure> {
        let mut pc = PipelineConfig::new(kind, self.depth()?);
        let d = FusionConfig::default();
        pc.fusion = FusionConfig {
            alpha: self.kv.get_or("alpha", d.alpha)?,
            impute_factor: self.kv.get_or("impute_factor", d.impute_factor)?,
        };
        pc.fusion.validate()?;
        pc.selector = self.selector()?;
        if let IvfBudget::Fixed(n) = self.ivf_budget()? {
            pc.ivf_budget = n;
        }
        pc.repetitions = self.kv.get_or("repetitions", 3usize)?;
        Ok(pc)
    }

    pub fn ivf_budget(&self) -> Result<IvfBudget, Failure> {
        match self.kv.get_str("ivf_budget") {
            None | Some("auto") => Ok(IvfBudget::Auto),
            Some(_) => Ok(IvfBudget::Fixed(self.kv.get_or("ivf_budget", 1usize)?)),
        }
    }

    /// Average cluster budget used to tune theta; `None` keeps the configured theta.
    pub fn target_clusters(&self) -> Result<Option<f64>, Failure> {
        let t: f64 = self.kv.get_or("target_clusters", 0.0)?;
        if !(t.is_finite() && t >= 0.0) {
            return Err(Failure::new(
                "invalid_argument",
                "target_clusters must be finite and >= 0",
            ));
        }
        Ok((t > 0.0).then_some(t))
    }

    pub fn disk_mode(&self) -> Result<bool, Failure> {
        match self.kv.get_str("mode").unwrap_or("memory") {
            "memory" => Ok(false),
            "disk" => Ok(true),
            other => Err(Failure::new(
                "invalid_argument",
                format!("mode must be memory or disk, got `{other}`"),
            )),
        }
    }

    pub fn per_op_overhead(&self) -> Result<f64, Failure> {
        Ok(self.kv.get_or("per_op_overhead", DEFAULT_PER_OP_OVERHEAD)?)
    }

    pub fn coalesce(&self) -> Result<bool, Failure> {
        Ok(self.kv.get_or("coalesce", true)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IvfBudget {
    /// Round the `fuse_clusd` average cluster count up.
    Auto,
    Fixed(usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BuildSettings {
    pub num_clusters: usize,
    pub kmeans_iters: usize,
    pub neighbors: usize,
    pub cluster_seed: u64,
    pub pq_subspaces: usize,
    pub pq_seed: u64,
    pub disk_store: bool,
}

impl BuildSettings {
    pub fn to_kv(&self) -> KvMap {
        let mut kv = KvMap::new();
        kv.set("num_clusters", self.num_clusters);
        kv.set("kmeans_iters", self.kmeans_iters);
        kv.set("neighbors", self.neighbors);
        kv.set("cluster_seed", self.cluster_seed);
        kv.set("pq_subspaces", self.pq_subspaces);
        kv.set("pq_seed", self.pq_seed);
        kv.set("disk_store", self.disk_store);
        kv
    }
}
