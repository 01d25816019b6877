use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::parser::ValueSource;
use clap::{ArgMatches, Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use serde_json::json;

use pkgforge::checkpoint::ModelCheckpoint;
use pkgforge::config::{PipelineConfig, DEFAULT_POOL_FACTOR};
use pkgforge::corpus::{SegmentCorpus, StepDatabase};
use pkgforge::dedup::DEFAULT_DEDUP_THRESHOLD;
use pkgforge::downstream::{run_downstream, Annotations, FeatureSource, TaskKind};
use pkgforge::graph::{
    build_graph, to_dot, GraphStats, ProceduralKnowledgeGraph, DEFAULT_INSTANCE_THRESHOLD,
};
use pkgforge::labeler::{emit_labels, LabelFile};
use pkgforge::matcher::{DEFAULT_MATCH_THRESHOLD, DEFAULT_TOP_K};
use pkgforge::synth::{self, NoisePreset};
use pkgforge::trainer::{build_training_set, train, Objective, PaprikaModel, DEFAULT_BOTTLENECK};

/// File holding the effective pipeline config inside a world directory.
const WORLD_CONFIG_FILE: &str = "pipeline.json";

#[derive(Debug, Parser)]
#[command(
    name = "pkgforge",
    version,
    about = "Build procedural knowledge graphs from step databases and video corpora, and train graph-supervised segment adapters"
)]
struct Cli {
    /// Pipeline config (JSON). Defaults to <world>/pipeline.json when a
    /// world directory is given, else built-in defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random draw; overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads [default: available cores]. Output does not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output path. Stages that emit JSON print to stdout without it.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic world directory with ground truth.
    Synth(SynthArgs),
    /// Deduplicate headlines, match segments and assemble graph.json.
    BuildGraph(BuildGraphArgs),
    /// Emit per-segment pseudo labels from a graph.
    Labels(LabelArgs),
    /// Pretrain the adapter and answer heads on pseudo labels.
    Pretrain(PretrainArgs),
    /// Train and score downstream TR/SR/SF models on raw or adapter features.
    Eval(EvalArgs),
    /// Summary statistics and optional DOT export of a graph.
    GraphStats(GraphStatsArgs),
}

#[derive(Debug, Args)]
struct Inputs {
    /// World directory supplying steps.jsonl, manifest.jsonl and pipeline.json.
    #[arg(long)]
    world: Option<PathBuf>,
    /// Step database (JSONL).
    #[arg(long)]
    steps: Option<PathBuf>,
    /// Corpus manifest (JSONL) next to its feature files.
    #[arg(long)]
    manifest: Option<PathBuf>,
}

impl Inputs {
    fn resolve(&self, explicit: &Option<PathBuf>, file: &str, flag: &str) -> Result<PathBuf> {
        match (explicit, &self.world) {
            (Some(p), _) => Ok(p.clone()),
            (None, Some(w)) => Ok(w.join(file)),
            (None, None) => bail!("--{flag} or --world is required"),
        }
    }

    fn steps(&self) -> Result<StepDatabase> {
        let path = self.resolve(&self.steps, synth::STEPS_FILE, "steps")?;
        Ok(StepDatabase::load(&path)?)
    }

    fn corpus(&self) -> Result<SegmentCorpus> {
        let path = self.resolve(&self.manifest, synth::MANIFEST_FILE, "manifest")?;
        Ok(SegmentCorpus::load(&path)?)
    }
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Noise preset: zero, low, medium or high.
    #[arg(long, default_value = "low")]
    noise: String,
    #[arg(long, default_value_t = 200)]
    n_videos: usize,
    #[arg(long, default_value_t = 20)]
    n_tasks: usize,
}

#[derive(Debug, Args)]
struct BuildGraphArgs {
    #[command(flatten)]
    inputs: Inputs,
    /// Cosine distance below which headlines merge into one node.
    #[arg(long, default_value_t = DEFAULT_DEDUP_THRESHOLD)]
    dedup_threshold: f64,
    /// Segment-headline dot products strictly above this count as matches.
    #[arg(long, default_value_t = DEFAULT_MATCH_THRESHOLD)]
    match_threshold: f64,
    /// Corpus transitions whose summed score is not above this are pruned.
    #[arg(long, default_value_t = DEFAULT_INSTANCE_THRESHOLD)]
    instance_threshold: f64,
    /// Stored segments averaged per matching segment (3 x 3.2 s = 9.6 s).
    #[arg(long, default_value_t = DEFAULT_POOL_FACTOR)]
    pool_factor: usize,
}

#[derive(Debug, Args)]
struct LabelArgs {
    #[command(flatten)]
    inputs: Inputs,
    #[arg(long)]
    graph: PathBuf,
    /// Nodes kept per segment for video-node matching.
    #[arg(long, default_value_t = DEFAULT_TOP_K)]
    vnm_k: usize,
    /// Corpus tasks kept per segment for task matching.
    #[arg(long, default_value_t = 3)]
    vtm_corpus_k: usize,
    /// Nodes kept per corpus task for context learning.
    #[arg(long, default_value_t = 3)]
    tcl_corpus_k: usize,
    #[arg(long, default_value_t = 2)]
    nrl_hops: usize,
    /// Neighbours kept at each hop.
    #[arg(long, value_delimiter = ',', default_value = "5,3")]
    nrl_top: Vec<usize>,
    /// Headlines kept per segment for step matching.
    #[arg(long, default_value_t = 3)]
    vsm_k: usize,
    #[arg(long, default_value_t = DEFAULT_POOL_FACTOR)]
    pool_factor: usize,
}

#[derive(Debug, Args)]
struct PretrainArgs {
    #[command(flatten)]
    inputs: Inputs,
    #[arg(long)]
    labels: PathBuf,
    /// Comma-separated: vnm, vtm_db, vtm_corpus, tcl_db, tcl_corpus, nrl, vsm.
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "vnm,vtm_db,vtm_corpus,tcl_db,tcl_corpus,nrl"
    )]
    objectives: Vec<String>,
    #[arg(long, default_value_t = 1e-4)]
    lr: f64,
    #[arg(long, default_value_t = 0.0)]
    weight_decay: f64,
    #[arg(long, default_value_t = 256)]
    batch_size: usize,
    #[arg(long, default_value_t = 200)]
    max_epochs: usize,
    #[arg(long, default_value_t = 10)]
    patience: usize,
    #[arg(long, default_value_t = DEFAULT_BOTTLENECK)]
    bottleneck: usize,
    #[arg(long, default_value_t = DEFAULT_POOL_FACTOR)]
    pool_factor: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SourceChoice {
    Raw,
    Adapter,
    Both,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Corpus manifest (JSONL); defaults to <world>/manifest.jsonl.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    world: Option<PathBuf>,
    /// Downstream annotations; defaults to <world>/downstream_labels.jsonl.
    #[arg(long)]
    annotations: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Comma-separated subset of TR, SR, SF.
    #[arg(long, value_delimiter = ',', default_value = "TR,SR,SF")]
    task: Vec<String>,
    #[arg(long, value_enum, default_value_t = SourceChoice::Both)]
    feature_source: SourceChoice,
    /// Evaluate even if the checkpoint was produced under another config.
    #[arg(long)]
    force: bool,
}

#[derive(Debug, Args)]
struct GraphStatsArgs {
    #[arg(long)]
    graph: PathBuf,
    /// Write a Graphviz rendering here.
    #[arg(long)]
    dot: Option<PathBuf>,
    /// Comma-separated node ids to center the DOT subgraph on (all nodes if empty).
    #[arg(long, value_delimiter = ',')]
    center: Vec<usize>,
    #[arg(long, default_value_t = 1)]
    radius: usize,
}

/// True when the flag was typed on the command line rather than defaulted.
fn given(m: &ArgMatches, id: &str) -> bool {
    m.value_source(id) == Some(ValueSource::CommandLine)
}

fn load_config(
    cli: &Cli,
    world: Option<&Path>,
    fallback: PipelineConfig,
) -> Result<PipelineConfig> {
    let mut config = match (&cli.config, world.map(|w| w.join(WORLD_CONFIG_FILE))) {
        (Some(p), _) => PipelineConfig::load(p)?,
        (None, Some(p)) if p.exists() => PipelineConfig::load(&p)?,
        _ => fallback,
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    Ok(config)
}

fn emit(out: &Option<PathBuf>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            stdout.flush()?;
            Ok(())
        }
    }
}

fn to_json_text<T: serde::Serialize + ?Sized>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

fn check_hash(what: &str, found: Option<&str>, expected: &str) {
    if found != Some(expected) {
        log::warn!("{what} was produced under config {found:?}, current config is {expected}");
    }
}

fn cmd_synth(cli: &Cli, args: &SynthArgs, m: &ArgMatches) -> Result<()> {
    let out = cli
        .out
        .as_ref()
        .ok_or_else(|| anyhow!("synth needs --out <dir>"))?;
    let mut config = load_config(cli, None, PipelineConfig::synthetic())?;
    if given(m, "noise") || cli.config.is_none() {
        config.world.noise_sigma = NoisePreset::parse(&args.noise)?.sigma();
    }
    if given(m, "n_videos") {
        config.world.n_videos = args.n_videos;
    }
    if given(m, "n_tasks") {
        config.world.n_tasks = args.n_tasks;
    }
    config.validate()?;
    let hash = config.hash();
    let world_config = config.world_config();
    let world = synth::generate(&world_config)?;
    synth::write_world(out, &world, &world_config, Some(hash.clone()))?;
    config.save(out.join(WORLD_CONFIG_FILE))?;
    let summary = json!({
        "world": out,
        "config_hash": hash,
        "videos": world.corpus.videos.len(),
        "segments": world.corpus.total_segments(),
        "headlines": world.database.num_headlines(),
        "canonical_steps": world.truth.steps.len(),
        "canonical_transitions": world.truth.canonical_transitions.len(),
    });
    emit(&None, &to_json_text(&summary)?)
}

fn cmd_build_graph(cli: &Cli, args: &BuildGraphArgs, m: &ArgMatches) -> Result<()> {
    let mut config = load_config(cli, args.inputs.world.as_deref(), PipelineConfig::default())?;
    if given(m, "dedup_threshold") {
        config.graph.dedup_threshold = args.dedup_threshold;
    }
    if given(m, "match_threshold") {
        config.graph.match_threshold = args.match_threshold;
    }
    if given(m, "instance_threshold") {
        config.graph.instance_threshold = args.instance_threshold;
    }
    if given(m, "pool_factor") {
        config.pool_factor = args.pool_factor;
    }
    config.validate()?;
    let hash = config.hash();
    let db = args.inputs.steps()?;
    let corpus = args.inputs.corpus()?.pooled(config.pool_factor)?;
    let (graph, report) = build_graph(&db, &corpus, &config.graph)?;
    log::info!("{}", serde_json::to_string(&report)?);
    emit(&cli.out, &graph.with_config_hash(hash).to_json())
}

fn cmd_labels(cli: &Cli, args: &LabelArgs, m: &ArgMatches) -> Result<()> {
    let mut config = load_config(cli, args.inputs.world.as_deref(), PipelineConfig::default())?;
    let l = &mut config.labels;
    if given(m, "vnm_k") {
        l.vnm_k = args.vnm_k;
    }
    if given(m, "vtm_corpus_k") {
        l.vtm_corpus_k = args.vtm_corpus_k;
    }
    if given(m, "tcl_corpus_k") {
        l.tcl_corpus_k = args.tcl_corpus_k;
    }
    if given(m, "nrl_hops") {
        l.nrl_hops = args.nrl_hops;
    }
    if given(m, "nrl_top") {
        l.nrl_top_per_hop = args.nrl_top.clone();
    }
    if given(m, "vsm_k") {
        l.vsm_k = args.vsm_k;
    }
    if given(m, "pool_factor") {
        config.pool_factor = args.pool_factor;
    }
    config.validate()?;
    let hash = config.hash();
    let graph = ProceduralKnowledgeGraph::load(&args.graph)?;
    check_hash("graph", graph.config_hash(), &hash);
    let db = args.inputs.steps()?;
    let corpus = args.inputs.corpus()?.pooled(config.pool_factor)?;
    let labels = emit_labels(&corpus, &db, &graph, &config.labels, Some(hash))?;
    emit(&cli.out, &labels.to_jsonl())
}

fn cmd_pretrain(cli: &Cli, args: &PretrainArgs, m: &ArgMatches) -> Result<()> {
    let out = cli
        .out
        .as_ref()
        .ok_or_else(|| anyhow!("pretrain needs --out <checkpoint>"))?;
    let mut config = load_config(cli, args.inputs.world.as_deref(), PipelineConfig::default())?;
    let t = &mut config.train;
    if given(m, "objectives") {
        t.objectives = args
            .objectives
            .iter()
            .map(|s| Objective::parse(s.trim()))
            .collect::<pkgforge::Result<_>>()?;
    }
    if given(m, "lr") {
        t.learning_rate = args.lr;
    }
    if given(m, "weight_decay") {
        t.weight_decay = args.weight_decay;
    }
    if given(m, "batch_size") {
        t.batch_size = args.batch_size;
    }
    if given(m, "max_epochs") {
        t.max_epochs = args.max_epochs;
    }
    if given(m, "patience") {
        t.patience = args.patience;
    }
    if given(m, "bottleneck") {
        t.bottleneck = args.bottleneck;
    }
    if given(m, "pool_factor") {
        config.pool_factor = args.pool_factor;
    }
    config.validate()?;
    let hash = config.hash();
    let labels = LabelFile::load(&args.labels)?;
    check_hash("labels", labels.header.config_hash.as_deref(), &hash);
    let corpus = args.inputs.corpus()?.pooled(config.pool_factor)?;
    let set = build_training_set(&corpus, &labels, &config.train)?;
    let outcome = train(&set, &config.train, config.seed)?;
    outcome
        .model
        .to_checkpoint(config.seed, Some(hash.clone()))
        .save(out)?;
    let last = outcome.history.last();
    let summary = json!({
        "checkpoint": out,
        "config_hash": hash,
        "samples": set.len(),
        "heads": outcome.model.heads.iter().map(|h| &h.spec.name).collect::<Vec<_>>(),
        "epochs": outcome.history.len(),
        "best_epoch": outcome.best_epoch,
        "steps": outcome.steps,
        "final_train_loss": last.map(|r| r.train_loss),
        "final_val_loss": last.and_then(|r| r.val_loss),
    });
    emit(&None, &to_json_text(&summary)?)
}

fn cmd_eval(cli: &Cli, args: &EvalArgs) -> Result<()> {
    let config = load_config(cli, args.world.as_deref(), PipelineConfig::default())?;
    config.validate()?;
    let hash = config.hash();
    let from_world = |explicit: &Option<PathBuf>, file: &str, flag: &str| -> Result<PathBuf> {
        match (explicit, &args.world) {
            (Some(p), _) => Ok(p.clone()),
            (None, Some(w)) => Ok(w.join(file)),
            (None, None) => bail!("--{flag} or --world is required"),
        }
    };
    let corpus = SegmentCorpus::load(from_world(
        &args.manifest,
        synth::MANIFEST_FILE,
        "manifest",
    )?)?;
    let annotations = Annotations::load(from_world(
        &args.annotations,
        synth::DOWNSTREAM_FILE,
        "annotations",
    )?)?;
    let tasks: Vec<TaskKind> = args
        .task
        .iter()
        .map(|s| TaskKind::parse(s.trim()))
        .collect::<pkgforge::Result<_>>()?;

    let mut sources = Vec::new();
    if args.feature_source != SourceChoice::Adapter {
        sources.push(FeatureSource::Raw);
    }
    if args.feature_source != SourceChoice::Raw {
        let path = args
            .checkpoint
            .as_ref()
            .ok_or_else(|| anyhow!("adapter features need --checkpoint"))?;
        let ckpt = ModelCheckpoint::load(path)?;
        let found = ckpt.metadata.config_hash.as_deref();
        if found != Some(hash.as_str()) {
            if !args.force {
                bail!(
                    "checkpoint {} was produced under config {}, current config is {hash}; pass --force to evaluate anyway",
                    path.display(),
                    found.unwrap_or("<none>")
                );
            }
            log::warn!("evaluating checkpoint from config {found:?} under {hash}");
        }
        sources.push(FeatureSource::Adapter(Box::new(
            PaprikaModel::from_checkpoint(&ckpt)?,
        )));
    }

    let mut reports = Vec::new();
    for &kind in &tasks {
        for source in &sources {
            let (mut report, trained) = run_downstream(
                &corpus,
                &annotations,
                source,
                kind,
                &config.downstream,
                config.seed,
            )?;
            log::info!(
                "{} {}: accuracy {:.4} (best epoch {})",
                kind.code(),
                source.name(),
                report.accuracy,
                trained.best_epoch
            );
            report.config_hash = Some(hash.clone());
            reports.push(report);
        }
    }
    emit(&cli.out, &to_json_text(&reports)?)
}

fn cmd_graph_stats(cli: &Cli, args: &GraphStatsArgs) -> Result<()> {
    let graph = ProceduralKnowledgeGraph::load(&args.graph)?;
    if let Some(dot) = &args.dot {
        fs::write(dot, to_dot(&graph, &args.center, args.radius))
            .with_context(|| format!("writing {}", dot.display()))?;
    }
    let stats = json!({
        "config_hash": graph.config_hash(),
        "stats": GraphStats::compute(&graph),
    });
    emit(&cli.out, &to_json_text(&stats)?)
}

fn run(cli: &Cli, matches: &ArgMatches) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            bail!("--threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()?;
    }
    let sub = matches
        .subcommand()
        .map(|(_, m)| m)
        .expect("subcommand is required");
    match &cli.command {
        Command::Synth(a) => cmd_synth(cli, a, sub),
        Command::BuildGraph(a) => cmd_build_graph(cli, a, sub),
        Command::Labels(a) => cmd_labels(cli, a, sub),
        Command::Pretrain(a) => cmd_pretrain(cli, a, sub),
        Command::Eval(a) => cmd_eval(cli, a),
        Command::GraphStats(a) => cmd_graph_stats(cli, a),
    }
}

fn fail(msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("{}", json!({ "error": msg.to_string() }));
    ExitCode::FAILURE
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("PKGFORGE_LOG", "warn")).init();

    let matches = match Cli::command().try_get_matches() {
        Ok(m) => m,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail(e.to_string().lines().next().unwrap_or("invalid arguments")),
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => return fail(e),
    };
    match run(&cli, &matches) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(format!("{e:#}")),
    }
}
