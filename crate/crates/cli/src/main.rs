//! `clusd`: synthesize data, build indexes, train the cluster selector, search
//! and benchmark.
//!
//! Settings come from built-in defaults, then `--config FILE`, then flags.
//! Failures print one `error kind=<kind> message="..."` line on stderr and
//! exit with status 1; usage errors exit with status 2.

mod commands;
mod failure;
mod layout;
mod manifest;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use clusd_core::eval::PipelineKind;
use clusd_core::kv::KvMap;

use crate::failure::Failure;
use crate::layout::Layout;
use crate::settings::Settings;

#[derive(Debug, Parser)]
#[command(
    name = "clusd",
    version,
    about = "Hybrid sparse/dense retrieval with learned cluster selection"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic corpus, query set and judgments.
    Synth(SynthArgs),
    /// Build the inverted index, cluster model, neighbor graph and disk store.
    Build(BuildArgs),
    /// Train the cluster selector on the training queries.
    Train(TrainArgs),
    /// Run one pipeline and write a run file.
    Search(SearchArgs),
    /// Run every pipeline over the evaluation queries and write reports.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
struct Common {
    /// key=value configuration file.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Seed for this command's randomness.
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,
    /// Output directory.
    #[arg(
        long,
        value_name = "DIR",
        env = "CLUSD_DATA_DIR",
        default_value = "clusd-data"
    )]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct InputArg {
    /// Directory holding earlier artifacts; defaults to the output directory.
    #[arg(long, value_name = "DIR")]
    input: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RetrievalArgs {
    /// Cluster selection threshold.
    #[arg(long, value_name = "REAL")]
    theta: Option<f64>,
    /// Weight of the sparse score in fusion.
    #[arg(long, value_name = "REAL")]
    alpha: Option<f64>,
    /// Sparse retrieval depth and output length.
    #[arg(long, value_name = "DEPTH")]
    k: Option<usize>,
    /// Stage-I candidate count.
    #[arg(long = "stage1-n", value_name = "N")]
    stage1_n: Option<usize>,
    /// Read document vectors from the disk store.
    #[arg(long, conflicts_with = "memory")]
    disk: bool,
    /// Keep document vectors in memory (the default).
    #[arg(long)]
    memory: bool,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct BuildArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    input: InputArg,
    /// Number of k-means clusters.
    #[arg(long, value_name = "N")]
    clusters: Option<usize>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    input: InputArg,
    /// Stage-I candidate count.
    #[arg(long = "stage1-n", value_name = "N")]
    stage1_n: Option<usize>,
    /// Sparse retrieval depth used to build features.
    #[arg(long, value_name = "DEPTH")]
    k: Option<usize>,
}

#[derive(Debug, Args)]
struct SearchArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    input: InputArg,
    #[command(flatten)]
    retrieval: RetrievalArgs,
    /// Pipeline to run.
    #[arg(long, value_name = "NAME", value_parser = parse_pipeline)]
    pipeline: Option<PipelineKind>,
    /// Query file; defaults to the evaluation split of the built query set.
    #[arg(long, value_name = "PATH")]
    queries: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    input: InputArg,
    #[command(flatten)]
    retrieval: RetrievalArgs,
}

fn parse_pipeline(s: &str) -> Result<PipelineKind, String> {
    s.parse().map_err(|_| {
        let names: Vec<&str> = PipelineKind::ALL.iter().map(|k| k.name()).collect();
        format!("expected one of {}", names.join(", "))
    })
}

impl RetrievalArgs {
    fn apply(&self, kv: &mut KvMap) {
        if let Some(t) = self.theta {
            kv.set("theta", t);
        }
        if let Some(a) = self.alpha {
            kv.set("alpha", a);
        }
        if let Some(k) = self.k {
            kv.set("k", k);
        }
        if let Some(n) = self.stage1_n {
            kv.set("stage1_n", n);
        }
        if self.disk {
            kv.set("mode", "disk");
        } else if self.memory {
            kv.set("mode", "memory");
        }
    }
}

/// Flags become the top settings layer. `--seed` sets the seed key of the
/// stage the command runs.
fn seed_flag(kv: &mut KvMap, key: &str, seed: Option<u64>) {
    if let Some(s) = seed {
        kv.set(key, s);
    }
}

fn input_layout(common: &Common, input: &InputArg) -> Layout {
    Layout::new(input.input.clone().unwrap_or_else(|| common.out.clone()))
}

fn run(cli: Cli) -> Result<(), Failure> {
    let empty = KvMap::new();
    let mut flags = KvMap::new();
    match cli.command {
        Command::Synth(a) => {
            seed_flag(&mut flags, "rng_seed", a.common.seed);
            let settings = Settings::resolve(&empty, a.common.config.as_deref(), &flags)?;
            commands::synth(&settings, &Layout::new(&a.common.out))
        }
        Command::Build(a) => {
            seed_flag(&mut flags, "cluster_seed", a.common.seed);
            if let Some(n) = a.clusters {
                flags.set("num_clusters", n);
            }
            let settings = Settings::resolve(&empty, a.common.config.as_deref(), &flags)?;
            let input = input_layout(&a.common, &a.input);
            commands::build(&settings, &input, &Layout::new(&a.common.out))
        }
        Command::Train(a) => {
            seed_flag(&mut flags, "train_seed", a.common.seed);
            if let Some(n) = a.stage1_n {
                flags.set("stage1_n", n);
            }
            if let Some(k) = a.k {
                flags.set("k", k);
            }
            let settings = Settings::resolve(&empty, a.common.config.as_deref(), &flags)?;
            let input = input_layout(&a.common, &a.input);
            commands::train_selector(&settings, &input, &Layout::new(&a.common.out))
        }
        Command::Search(a) => {
            a.retrieval.apply(&mut flags);
            if let Some(p) = a.pipeline {
                flags.set("pipeline", p);
            }
            let input = input_layout(&a.common, &a.input);
            let base = commands::trained_selector_layer(&input)?;
            let settings = Settings::resolve(&base, a.common.config.as_deref(), &flags)?;
            commands::search(
                &settings,
                &input,
                &Layout::new(&a.common.out),
                a.queries.as_deref(),
            )
        }
        Command::Bench(a) => {
            a.retrieval.apply(&mut flags);
            let input = input_layout(&a.common, &a.input);
            let base = commands::trained_selector_layer(&input)?;
            let settings = Settings::resolve(&base, a.common.config.as_deref(), &flags)?;
            commands::bench(&settings, &input, &Layout::new(&a.common.out))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::FAILURE
        }
    }
}
