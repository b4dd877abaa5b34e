use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use clusd_core::cluster::{build_neighbor_graph, kmeans_fit, ClusterModel};
use clusd_core::corpus::{
    generate_synthetic, load_corpus, load_qrels, load_queries, save_corpus, save_qrels,
    save_queries, Corpus, Qrels, QuerySet,
};
use clusd_core::eval::{
    metrics_csv, metrics_json, metrics_kv, metrics_table, run_pipeline, timing_csv, timing_kv,
    timing_table, write_run_file, Components, DenseBackend, MetricsReport, PipelineConfig,
    PipelineKind, RunResult,
};
use clusd_core::kv::KvMap;
use clusd_core::lstm::{build_training_set, train, LstmParams};
use clusd_core::pq::pq_train;
use clusd_core::selector::{select_for_query, theta_for_budget, SelectorConfig};
use clusd_core::sparse::InvertedIndex;
use clusd_core::storage::{write_store, DiskStore};
use log::info;

use crate::failure::Failure;
use crate::layout::{require, Layout};
use crate::manifest::RunManifest;
use crate::settings::{IvfBudget, Settings};

/// Keys describing the selector layout; persisted next to trained parameters.
const SELECTOR_KEYS: [&str; 4] = ["stage1_n", "cluster_bins", "stage1_order", "bin_boundaries"];

fn selector_kv(sel: &SelectorConfig) -> KvMap {
    let mut kv = KvMap::new();
    kv.set("stage1_n", sel.n);
    kv.set("cluster_bins", sel.u);
    kv.set("stage1_order", sel.order);
    kv.set(
        "bin_boundaries",
        sel.bin_boundaries
            .iter()
            .map(ToString::to_string)
            .collect::<Vec<_>>()
            .join(","),
    );
    kv
}

/// Layout keys recorded by `train`, used as the lowest settings layer when
/// searching so the parameters see the feature width they were trained on.
pub fn trained_selector_layer(input: &Layout) -> Result<KvMap, Failure> {
    let path = input.selector_conf();
    let mut out = KvMap::new();
    if path.is_file() {
        let kv = KvMap::load(&path)?;
        for key in SELECTOR_KEYS {
            if let Some(v) = kv.get_str(key) {
                out.set(key, v);
            }
        }
    }
    Ok(out)
}

pub fn synth(settings: &Settings, out: &Layout) -> Result<(), Failure> {
    let cfg = settings.synth()?;
    out.ensure()?;
    RunManifest::new("synth", cfg.to_kv())?.write(&out.dir)?;
    let (corpus, queries, qrels) = generate_synthetic(&cfg)?;
    save_corpus(&corpus, &out.corpus())?;
    save_queries(&queries, &out.queries())?;
    save_qrels(&qrels, &out.qrels())?;
    println!(
        "synth docs={} queries={} judgments={} dir={}",
        corpus.len(),
        queries.len(),
        qrels.len(),
        out.dir.display()
    );
    Ok(())
}

pub fn build(settings: &Settings, input: &Layout, out: &Layout) -> Result<(), Failure> {
    let b = settings.build()?;
    let mut manifest = RunManifest::new("build", b.to_kv())?;
    manifest.add_input("corpus", require(&input.corpus())?)?;
    out.ensure()?;
    manifest.write(&out.dir)?;

    let corpus = load_corpus(&input.corpus())?;
    let index = InvertedIndex::build(&corpus);
    index.save(&out.index())?;
    info!(
        "index: {} terms, {} postings",
        index.num_terms(),
        index.num_postings()
    );

    let model = kmeans_fit(&corpus, b.num_clusters, b.kmeans_iters, b.cluster_seed)?;
    let model = build_neighbor_graph(model, b.neighbors.min(b.num_clusters));
    model.save(&out.clusters())?;
    if b.disk_store {
        write_store(&corpus, &model, &out.store())?;
    }
    if b.pq_subspaces > 0 {
        pq_train(&corpus, b.pq_subspaces, b.pq_seed)?.save(&out.pq())?;
    }
    println!(
        "build docs={} terms={} clusters={} neighbors={} store={} pq_subspaces={}",
        corpus.len(),
        index.num_terms(),
        model.num_clusters(),
        model.neighbor_m(),
        b.disk_store,
        b.pq_subspaces
    );
    Ok(())
}

struct Built {
    corpus: Corpus,
    queries: QuerySet,
    index: InvertedIndex,
    model: ClusterModel,
}

fn load_built(input: &Layout, manifest: &mut RunManifest) -> Result<Built, Failure> {
    for (label, path) in [
        ("corpus", input.corpus()),
        ("queries", input.queries()),
        ("index", input.index()),
        ("clusters", input.clusters()),
    ] {
        manifest.add_input(label, require(&path)?)?;
    }
    Ok(Built {
        corpus: load_corpus(&input.corpus())?,
        queries: load_queries(&input.queries())?,
        index: InvertedIndex::load(&input.index())?,
        model: ClusterModel::load(&input.clusters())?,
    })
}

fn training_split(queries: &QuerySet, train_queries: usize) -> (QuerySet, QuerySet) {
    queries.split_at(train_queries.min(queries.len()))
}

pub fn train_selector(settings: &Settings, input: &Layout, out: &Layout) -> Result<(), Failure> {
    let tc = settings.train()?;
    let sel = settings.selector()?;
    let train_queries = settings.train_queries()?;
    let mut config = tc.to_kv();
    config.merge(&selector_kv(&sel));
    config.set("k", settings.depth()?);
    config.set("train_queries", train_queries);
    let mut manifest = RunManifest::new("train", config)?;
    let built = load_built(input, &mut manifest)?;
    out.ensure()?;
    manifest.write(&out.dir)?;

    sel.validate(built.model.num_clusters())?;
    let (train_q, _) = training_split(&built.queries, train_queries);
    if train_q.is_empty() {
        return Err(Failure::new(
            "invalid_argument",
            "no training queries (train_queries = 0)",
        ));
    }
    let instances = build_training_set(
        &built.corpus,
        &train_q,
        &built.index,
        &built.model,
        &sel,
        tc.num_instances,
        tc.rng_seed,
    )?;
    let init = LstmParams::init(sel.input_dim(), tc.hidden_dim, tc.rng_seed);
    let outcome = train(init, &instances, &tc)?;
    outcome.params.save(&out.selector())?;
    fs::write(out.selector_conf(), selector_kv(&sel).to_string())?;
    let trace: String = outcome
        .loss_trace
        .iter()
        .map(|l| format!("{l}\n"))
        .collect();
    fs::write(out.train_loss(), trace)?;
    println!(
        "train instances={} epochs={} loss_first={} loss_last={}",
        instances.len(),
        tc.epochs,
        outcome.loss_trace.first().copied().unwrap_or(f64::NAN),
        outcome.loss_trace.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

/// Theta giving an average of `target` selected clusters on the training queries.
fn tune_theta(
    built: &Built,
    lstm: &LstmParams,
    sel: &SelectorConfig,
    train_q: &QuerySet,
    target: f64,
) -> Result<f64, Failure> {
    let mut lists = Vec::with_capacity(train_q.len());
    for q in train_q {
        let sparse = built.index.search(&q.sparse, sel.depth());
        lists.push(select_for_query(&built.model, lstm, sel, &sparse, q.dense.as_slice())?.scores);
    }
    Ok(theta_for_budget(&lists, target).min(1.0))
}

struct Session<'a> {
    built: &'a Built,
    lstm: Option<&'a LstmParams>,
    store: Option<DiskStore>,
}

impl Session<'_> {
    fn run(&mut self, queries: &QuerySet, config: &PipelineConfig) -> Result<RunResult, Failure> {
        let components = Components {
            corpus: &self.built.corpus,
            index: &self.built.index,
            model: &self.built.model,
            lstm: self.lstm,
        };
        let mut backend = match self.store.as_mut() {
            Some(store) => {
                store.reset_stats();
                DenseBackend::Disk(store)
            }
            None => DenseBackend::Memory,
        };
        info!("running {} over {} queries", config.kind, queries.len());
        Ok(run_pipeline(&components, &mut backend, queries, config)?)
    }
}

fn open_store(
    settings: &Settings,
    input: &Layout,
    manifest: &mut RunManifest,
) -> Result<Option<DiskStore>, Failure> {
    if !settings.disk_mode()? {
        return Ok(None);
    }
    let path = input.store();
    manifest.add_input("store", require(&path)?)?;
    let mut store = DiskStore::open(&path)?;
    store.set_per_op_overhead(settings.per_op_overhead()?);
    store.set_coalescing(settings.coalesce()?);
    Ok(Some(store))
}

fn load_lstm(input: &Layout, manifest: &mut RunManifest) -> Result<LstmParams, Failure> {
    let path = input.selector();
    manifest.add_input("selector", require(&path)?)?;
    Ok(LstmParams::load(&path)?)
}

/// Config keys shared by `search` and `bench` manifests.
fn retrieval_config(settings: &Settings, pc: &PipelineConfig) -> Result<KvMap, Failure> {
    let mut kv = pc.to_kv();
    kv.remove("pipeline");
    kv.set(
        "mode",
        if settings.disk_mode()? {
            "disk"
        } else {
            "memory"
        },
    );
    kv.set("per_op_overhead", settings.per_op_overhead()?);
    kv.set("coalesce", settings.coalesce()?);
    kv.set("train_queries", settings.train_queries()?);
    kv.set(
        "target_clusters",
        settings.target_clusters()?.unwrap_or(0.0),
    );
    kv.set(
        "ivf_budget",
        match settings.ivf_budget()? {
            IvfBudget::Auto => "auto".to_string(),
            IvfBudget::Fixed(n) => n.to_string(),
        },
    );
    Ok(kv)
}

/// Resolves theta and the IVF budget, then runs `kinds` in order.
fn run_kinds(
    settings: &Settings,
    session: &mut Session,
    train_q: &QuerySet,
    eval_q: &QuerySet,
    kinds: &[PipelineKind],
) -> Result<(Vec<RunResult>, f64, usize), Failure> {
    let mut base = settings.pipeline(PipelineKind::FuseClusd)?;
    if let Some(lstm) = session.lstm {
        if lstm.input_dim() != base.selector.input_dim() {
            return Err(Failure::new(
                "incompatible",
                format!(
                    "selector was trained on {} features per cluster, the current layout gives {}",
                    lstm.input_dim(),
                    base.selector.input_dim()
                ),
            ));
        }
    }
    if let (Some(target), Some(lstm)) = (settings.target_clusters()?, session.lstm) {
        base.selector.theta = tune_theta(session.built, lstm, &base.selector, train_q, target)?;
        info!(
            "theta tuned to {} for {target} clusters",
            base.selector.theta
        );
    }
    let needs_ivf = kinds.contains(&PipelineKind::FuseIvf);
    let auto_ivf = settings.ivf_budget()? == IvfBudget::Auto;
    let mut runs: Vec<RunResult> = Vec::new();
    let mut order: Vec<PipelineKind> = kinds
        .iter()
        .copied()
        .filter(|&k| k != PipelineKind::FuseIvf)
        .collect();
    if needs_ivf && auto_ivf && !order.contains(&PipelineKind::FuseClusd) {
        order.push(PipelineKind::FuseClusd);
    }
    for kind in order {
        let pc = PipelineConfig {
            kind,
            ..base.clone()
        };
        runs.push(session.run(eval_q, &pc)?);
    }
    let clusd_avg = runs
        .iter()
        .find(|r| r.kind == PipelineKind::FuseClusd)
        .map(|r| {
            r.queries
                .iter()
                .map(|q| q.clusters_selected as f64)
                .sum::<f64>()
                / r.queries.len().max(1) as f64
        });
    let ivf_budget = match (settings.ivf_budget()?, clusd_avg) {
        (IvfBudget::Fixed(n), _) => n,
        (IvfBudget::Auto, Some(avg)) => (avg.ceil() as usize).max(1),
        (IvfBudget::Auto, None) => base.ivf_budget,
    };
    if needs_ivf {
        let pc = PipelineConfig {
            kind: PipelineKind::FuseIvf,
            ivf_budget,
            ..base.clone()
        };
        runs.push(session.run(eval_q, &pc)?);
    }
    runs.retain(|r| kinds.contains(&r.kind));
    runs.sort_by_key(|r| kinds.iter().position(|&k| k == r.kind));
    Ok((runs, base.selector.theta, ivf_budget))
}

fn write_run(path: &Path, run: &RunResult) -> Result<(), Failure> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    write_run_file(&mut w, run, &run.label())?;
    w.flush()?;
    Ok(())
}

pub fn search(
    settings: &Settings,
    input: &Layout,
    out: &Layout,
    query_file: Option<&Path>,
) -> Result<(), Failure> {
    let kind = settings
        .pipeline_kind()?
        .ok_or_else(|| Failure::new("invalid_argument", "no pipeline given (use --pipeline)"))?;
    let pc = settings.pipeline(kind)?;
    let mut config = retrieval_config(settings, &pc)?;
    config.set("pipeline", kind);
    let mut manifest = RunManifest::new("search", config)?;
    let built = load_built(input, &mut manifest)?;
    let needs_lstm = matches!(kind, PipelineKind::FuseClusd)
        || (kind == PipelineKind::FuseIvf && settings.ivf_budget()? == IvfBudget::Auto);
    let lstm = needs_lstm
        .then(|| load_lstm(input, &mut manifest))
        .transpose()?;
    let external = match query_file {
        Some(path) => {
            manifest.add_input("query_file", require(path)?)?;
            Some(load_queries(path)?)
        }
        None => None,
    };
    let store = open_store(settings, input, &mut manifest)?;
    out.ensure()?;
    manifest.write(&out.dir)?;

    let (train_q, eval_q) = training_split(&built.queries, settings.train_queries()?);
    let queries = external.unwrap_or(eval_q);
    if queries.is_empty() {
        return Err(Failure::new("invalid_argument", "the query set is empty"));
    }
    let mut session = Session {
        built: &built,
        lstm: lstm.as_ref(),
        store,
    };
    let (runs, theta, ivf_budget) = run_kinds(settings, &mut session, &train_q, &queries, &[kind])?;
    let run = &runs[0];
    let path = out.run_file(&run.label());
    write_run(&path, run)?;
    println!(
        "search pipeline={} queries={} theta={theta} ivf_budget={ivf_budget} run={}",
        run.label(),
        run.queries.len(),
        path.display()
    );
    Ok(())
}

pub fn bench(settings: &Settings, input: &Layout, out: &Layout) -> Result<(), Failure> {
    let base = settings.pipeline(PipelineKind::FuseClusd)?;
    let mut manifest = RunManifest::new("bench", retrieval_config(settings, &base)?)?;
    let built = load_built(input, &mut manifest)?;
    manifest.add_input("qrels", require(&input.qrels())?)?;
    let lstm = load_lstm(input, &mut manifest)?;
    let store = open_store(settings, input, &mut manifest)?;
    let dir = out.bench_dir();
    fs::create_dir_all(dir.join("runs"))?;
    manifest.write(&out.dir)?;

    let qrels: Qrels = load_qrels(&input.qrels())?;
    let (train_q, eval_q) = training_split(&built.queries, settings.train_queries()?);
    if eval_q.is_empty() {
        return Err(Failure::new(
            "invalid_argument",
            "no evaluation queries left after the training split",
        ));
    }
    let mut session = Session {
        built: &built,
        lstm: Some(&lstm),
        store,
    };
    let (runs, theta, ivf_budget) = run_kinds(
        settings,
        &mut session,
        &train_q,
        &eval_q,
        &PipelineKind::ALL,
    )?;
    let reports = runs
        .iter()
        .map(|r| r.report(&qrels))
        .collect::<clusd_core::Result<Vec<MetricsReport>>>()?;

    let mut resolved = KvMap::new();
    resolved.set("theta", theta);
    resolved.set("ivf_budget", ivf_budget);
    resolved.set("eval_queries", eval_q.len());
    fs::write(dir.join("resolved.txt"), resolved.to_string())?;
    for run in &runs {
        write_run(&dir.join("runs").join(format!("{}.run", run.label())), run)?;
    }
    fs::write(dir.join("metrics.txt"), metrics_kv(&reports))?;
    fs::write(dir.join("metrics.json"), metrics_json(&reports))?;
    fs::write(dir.join("table.txt"), metrics_table(&reports))?;
    fs::write(dir.join("table.csv"), metrics_csv(&reports))?;
    fs::write(dir.join("timing.txt"), timing_kv(&reports))?;
    fs::write(dir.join("timing_table.txt"), timing_table(&reports))?;
    fs::write(dir.join("timing.csv"), timing_csv(&reports))?;
    print!("{}", metrics_table(&reports));
    println!(
        "bench theta={theta} ivf_budget={ivf_budget} reports={}",
        dir.display()
    );
    Ok(())
}
