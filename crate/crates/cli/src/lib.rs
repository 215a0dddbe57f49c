//! Command-line driver for the synthesis pipeline:
//! graph-gen → synth → rollout → filter → stats → export, plus eval.

pub mod config;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand};
use sha2::{Digest, Sha256};

use seeker_core::agent::{
    model_policy, oracle_policy, run_many, OracleStyle, Policy, TerminatedBy, Trajectory,
};
use seeker_core::client::{record_replay, ChatModel, ClientError, HttpTransport, ModelClient};
use seeker_core::dataset::export_sft;
use seeker_core::eval::{read_benchmark, run_eval, BenchmarkRecord, EvalItem, EvalReport, Judge, JudgeKind};
use seeker_core::filter::{assemble, read_items, write_items, Dataset, DatasetItem};
use seeker_core::graph::{expand, generate_random_graph, load_graph, KnowledgeGraph};
use seeker_core::prompts;
use seeker_core::stats::{compare, reference_summaries, summarize};
use seeker_core::synth::{certify, synthesize_model, synthesize_template, SynthError, TaskSpec};
use seeker_core::tools::{render_corpus, SimWorld, ToolRegistry};

pub use config::PipelineConfig;
use config::{GeneratorKind, PolicyKind};

/// Failure classes, each with its own exit status.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("upstream service failure: {0}")]
    Upstream(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Data(_) => 2,
            CliError::Upstream(_) => 3,
        }
    }
}

impl From<ClientError> for CliError {
    fn from(e: ClientError) -> Self {
        match e {
            ClientError::Config(m) => CliError::Config(m),
            other => CliError::Upstream(other.to_string()),
        }
    }
}

fn data<E: std::fmt::Display>(context: &Path) -> impl FnOnce(E) -> CliError + '_ {
    move |e| CliError::Data(format!("{}: {e}", context.display()))
}

#[derive(Debug, Parser)]
#[command(name = "seeker", version, about = "Synthesize, roll out, filter and export search-agent training data")]
pub struct Cli {
    /// Pipeline configuration (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the global seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides the worker count.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Overrides the output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a seeded random knowledge graph.
    GraphGen,
    /// Expand seed subgraphs and synthesize oracle-certified tasks.
    Synth,
    /// Run the configured policy on every task.
    Rollout {
        /// Task file; defaults to <out>/tasks.jsonl.
        #[arg(long)]
        tasks: Option<PathBuf>,
    },
    /// Apply correctness, low-step and dedup filters.
    Filter {
        /// Trajectory file; defaults to <out>/trajectories.jsonl.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Skip malformed lines instead of failing.
        #[arg(long)]
        lenient: bool,
    },
    /// Summarize tool-call counts and compare with reference means.
    Stats {
        /// Dataset file; defaults to <out>/dataset.jsonl.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Write SFT conversation records.
    Export {
        /// Dataset file; defaults to <out>/dataset.jsonl.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Evaluate a policy on synthesized tasks or a benchmark file.
    Eval {
        /// Task file; defaults to <out>/tasks.jsonl.
        #[arg(long, conflicts_with = "benchmark")]
        tasks: Option<PathBuf>,
        /// Benchmark file of (id, question, gold, aliases) records.
        #[arg(long)]
        benchmark: Option<PathBuf>,
    },
}

/// Per-stage seed: the global seed and stage name hashed together.
pub fn derive_seed(global: u64, stage: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(global.to_le_bytes());
    h.update(stage.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

/// Writes `bytes` to a sibling temp file, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(data(dir))?;
    let name = path.file_name().ok_or_else(|| CliError::Config(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result.map_err(data(path))
}

fn jsonl<T: serde::Serialize>(items: &[T]) -> Vec<u8> {
    let mut out = Vec::new();
    for it in items {
        serde_json::to_writer(&mut out, it).expect("records serialize");
        out.push(b'\n');
    }
    out
}

fn pretty<T: serde::Serialize>(v: &T) -> Vec<u8> {
    let mut s = serde_json::to_vec_pretty(v).expect("reports serialize");
    s.push(b'\n');
    s
}

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path).map(BufReader::new).map_err(data(path))
}

pub fn read_tasks(path: &Path) -> Result<Vec<TaskSpec>, CliError> {
    let text = fs::read_to_string(path).map_err(data(path))?;
    let mut tasks = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let t: TaskSpec = serde_json::from_str(line)
            .map_err(|e| CliError::Data(format!("{}: line {}: {e}", path.display(), n + 1)))?;
        t.validate().map_err(|e| CliError::Data(format!("{}: line {}: {e}", path.display(), n + 1)))?;
        tasks.push(t);
    }
    Ok(tasks)
}

/// Loads and validates the config, applying command-line overrides.
pub fn resolve_config(cli: &Cli) -> Result<PipelineConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p).map_err(CliError::Config)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(w) = cli.workers {
        cfg.workers = w;
    }
    if let Some(o) = &cli.out {
        cfg.paths.out_dir = o.clone();
    }
    cfg.validate().map_err(CliError::Config)?;
    Ok(cfg)
}

fn client(cfg: &PipelineConfig) -> Result<Arc<ModelClient>, CliError> {
    let c = &cfg.client;
    Ok(Arc::new(record_replay(c.mode, Some(&c.store), c.endpoint.clone(), Box::new(HttpTransport))?))
}

fn graph(cfg: &PipelineConfig) -> Result<KnowledgeGraph, CliError> {
    let p = cfg.graph_path();
    load_graph(&p).map_err(data(&p))
}

fn registry(world: SimWorld, cfg: &PipelineConfig) -> ToolRegistry {
    ToolRegistry::simulated(Arc::new(world), cfg.tools.profile, cfg.tools.observation.clone())
}

pub fn cmd_graph_gen(cfg: &PipelineConfig) -> Result<String, CliError> {
    let g = generate_random_graph(&cfg.graph.generate, derive_seed(cfg.seed, "graph-gen"))
        .map_err(|e| CliError::Config(e.to_string()))?;
    let path = cfg.out("graph.jsonl");
    write_atomic(&path, g.to_jsonl().as_bytes())?;
    Ok(format!("graph-gen: {} nodes, {} edges -> {}", g.node_count(), g.edge_count(), path.display()))
}

fn rejection_tag(e: &SynthError) -> String {
    match e {
        SynthError::Rejected(r) => {
            let v = serde_json::to_value(r).expect("rejections serialize");
            format!("rejected:{}", v["check"].as_str().unwrap_or("other"))
        }
        SynthError::NoPathOfLength(_) | SynthError::DegenerateSubgraph(_) => "no_path".into(),
        SynthError::NoCertifiablePath { .. } => "not_certifiable".into(),
        SynthError::Transport(_) => "transport".into(),
        _ => "unparseable".into(),
    }
}

pub fn cmd_synth(cfg: &PipelineConfig) -> Result<String, CliError> {
    let g = graph(cfg)?;
    if g.node_count() == 0 {
        return Err(CliError::Data("graph has no nodes".into()));
    }
    let model = match cfg.synth.generator {
        GeneratorKind::Model => Some(client(cfg)?),
        GeneratorKind::Template => None,
    };
    let diff = &cfg.synth.difficulty;
    let mut tasks: Vec<TaskSpec> = Vec::new();
    let mut tally: BTreeMap<String, usize> = BTreeMap::new();
    let mut transport_failures = 0;
    for i in 0..cfg.synth.seeds {
        let pick = derive_seed(cfg.seed, &format!("synth/{i}/seed")) as usize % g.node_count();
        let seed_id = g.node_at(pick).id.clone();
        let sub = expand(&g, &seed_id, cfg.expansion.budget, cfg.expansion.strategy, derive_seed(cfg.seed, &format!("synth/{i}/expand")))
            .map_err(|e| CliError::Data(e.to_string()))?;
        let result = match &model {
            None => synthesize_template(&sub, &g, diff, derive_seed(cfg.seed, &format!("synth/{i}/template"))),
            Some(c) => synthesize_model(&sub, &g, c.as_ref(), &cfg.synth.prompt, diff),
        };
        let task = match result {
            Ok(t) => t,
            Err(e) => {
                if matches!(e, SynthError::Transport(_)) {
                    transport_failures += 1;
                }
                *tally.entry(rejection_tag(&e)).or_default() += 1;
                continue;
            }
        };
        if let Err(r) = certify(&g, &task, diff) {
            *tally.entry(rejection_tag(&SynthError::Rejected(r))).or_default() += 1;
            continue;
        }
        if tasks.iter().any(|t| t.task_id == task.task_id) {
            *tally.entry("duplicate".into()).or_default() += 1;
            continue;
        }
        tasks.push(task);
    }
    let path = cfg.out("tasks.jsonl");
    let tally_text: Vec<String> = tally.iter().map(|(k, v)| format!("{k}={v}")).collect();
    let summary = format!(
        "synth: accepted={} of {} seeds [{}] -> {}",
        tasks.len(),
        cfg.synth.seeds,
        tally_text.join(" "),
        path.display()
    );
    if tasks.is_empty() {
        if transport_failures == cfg.synth.seeds {
            return Err(CliError::Upstream(format!("every synthesis call failed; {summary}")));
        }
        return Err(CliError::Data(format!("no task accepted; {summary}")));
    }
    write_atomic(&path, &jsonl(&tasks))?;
    Ok(summary)
}

fn make_policy<'a>(
    kind: PolicyKind,
    cfg: &'a PipelineConfig,
    g: &'a KnowledgeGraph,
    model: Option<Arc<dyn ChatModel>>,
) -> impl Fn(&TaskSpec) -> Result<Box<dyn Policy>, seeker_core::agent::AgentError> + Sync + 'a {
    move |t: &TaskSpec| -> Result<Box<dyn Policy>, seeker_core::agent::AgentError> {
        Ok(match kind {
            PolicyKind::OracleDirect => Box::new(oracle_policy(g, t, OracleStyle::Direct)?),
            PolicyKind::OraclePadded => Box::new(oracle_policy(g, t, OracleStyle::Padded(cfg.rollout.padding))?),
            PolicyKind::Model => Box::new(
                model_policy(Arc::clone(model.as_ref().expect("model client")), &cfg.rollout.prompt)
                    .expect("prompt validated with the config"),
            ),
        })
    }
}

fn terminated_counts(ts: &[Trajectory]) -> String {
    let mut by: BTreeMap<TerminatedBy, usize> = BTreeMap::new();
    for t in ts {
        *by.entry(t.terminated_by).or_default() += 1;
    }
    by.iter().map(|(k, v)| format!("{}={v}", k.as_str())).collect::<Vec<_>>().join(" ")
}

pub fn cmd_rollout(cfg: &PipelineConfig, tasks_path: Option<&Path>) -> Result<String, CliError> {
    let tasks_path = tasks_path.map(Path::to_path_buf).unwrap_or_else(|| cfg.out("tasks.jsonl"));
    let tasks = read_tasks(&tasks_path)?;
    let g = graph(cfg)?;
    let reg = registry(render_corpus(&g), cfg);
    let model: Option<Arc<dyn ChatModel>> = match cfg.rollout.policy {
        PolicyKind::Model => Some(client(cfg)? as Arc<dyn ChatModel>),
        _ => None,
    };
    let factory = make_policy(cfg.rollout.policy, cfg, &g, model);
    let trajectories = run_many(&tasks, factory, &reg, &cfg.rollout.budget.budget(), cfg.workers)
        .map_err(|e| CliError::Data(e.to_string()))?;
    let items: Vec<DatasetItem> = tasks
        .into_iter()
        .zip(trajectories)
        .map(|(task, trajectory)| DatasetItem { task, trajectory })
        .collect();
    let path = cfg.out("trajectories.jsonl");
    let mut buf = Vec::new();
    write_items(&items, &mut buf).map_err(data(&path))?;
    write_atomic(&path, &buf)?;
    let ts: Vec<Trajectory> = items.into_iter().map(|i| i.trajectory).collect();
    let summary = format!("rollout: {} trajectories [{}] -> {}", ts.len(), terminated_counts(&ts), path.display());
    let all_failed = !ts.is_empty() && ts.iter().all(|t| t.terminated_by == TerminatedBy::PolicyFailure);
    if cfg.rollout.policy == PolicyKind::Model && all_failed {
        return Err(CliError::Upstream(format!("every episode failed; {summary}")));
    }
    Ok(summary)
}

pub fn cmd_filter(cfg: &PipelineConfig, input: Option<&Path>, lenient: bool) -> Result<String, CliError> {
    let input = input.map(Path::to_path_buf).unwrap_or_else(|| cfg.out("trajectories.jsonl"));
    let (items, bad) = read_items(open(&input)?, lenient).map_err(data(&input))?;
    for b in &bad {
        eprintln!("warning: {}: skipped {b}", input.display());
    }
    let out = assemble(Dataset::new(items), &cfg.filter);
    let path = cfg.out("dataset.jsonl");
    let mut buf = Vec::new();
    write_items(&out.items, &mut buf).map_err(data(&path))?;
    write_atomic(&path, &buf)?;
    write_atomic(&cfg.out("provenance.json"), &pretty(&out.provenance))?;
    let stages: Vec<String> =
        out.provenance.stages.iter().map(|s| format!("{}: {} -> {}", s.stage, s.input, s.kept)).collect();
    Ok(format!(
        "filter: t_min={} kept={} of {} ({}); skipped_lines={} -> {}",
        cfg.filter.t_min,
        out.len(),
        out.provenance.input_count,
        stages.join(", "),
        bad.len(),
        path.display()
    ))
}

fn read_dataset(path: &Path) -> Result<Dataset, CliError> {
    let (items, _) = read_items(open(path)?, false).map_err(data(path))?;
    Ok(Dataset::new(items))
}

pub fn cmd_stats(cfg: &PipelineConfig, input: Option<&Path>) -> Result<String, CliError> {
    let input = input.map(Path::to_path_buf).unwrap_or_else(|| cfg.out("dataset.jsonl"));
    let d = read_dataset(&input)?;
    let summary = summarize::<f64>(d.trajectories(), cfg.stats.bucket_width);
    let mut rows = vec![(cfg.stats.name.clone(), summary.clone())];
    if cfg.stats.include_reference {
        rows.extend(reference_summaries());
    }
    let table = compare(rows).expect("at least one row");
    write_atomic(&cfg.out("stats.json"), &pretty(&serde_json::json!({ "summary": summary, "comparison": table })))?;
    write_atomic(&cfg.out("stats.csv"), table.to_csv().as_bytes())?;
    write_atomic(&cfg.out("stats.svg"), table.to_svg().as_bytes())?;
    let mean = summary.mean_tool_calls.map_or("n/a".to_string(), |m| format!("{m:.2}"));
    Ok(format!("stats: count={} mean_tool_calls={mean} -> {}", summary.count, cfg.out("stats.csv").display()))
}

/// System prompt placed at the head of every exported conversation.
pub fn export_system_prompt(cfg: &PipelineConfig) -> String {
    let schema = registry(SimWorld::from_pages(Vec::new(), Vec::new()), cfg).schema_block();
    prompts::render_builtin(&cfg.rollout.prompt, &BTreeMap::from([("tools", schema)]))
        .expect("prompt validated with the config")
}

pub fn cmd_export(cfg: &PipelineConfig, input: Option<&Path>) -> Result<String, CliError> {
    let input = input.map(Path::to_path_buf).unwrap_or_else(|| cfg.out("dataset.jsonl"));
    let d = read_dataset(&input)?;
    let mut buf = Vec::new();
    let n = export_sft(&d, &export_system_prompt(cfg), &mut buf).map_err(data(&input))?;
    let path = cfg.out("sft.jsonl");
    write_atomic(&path, &buf)?;
    Ok(format!("export: {n} records -> {}", path.display()))
}

fn eval_report<T: EvalItem + Sync>(
    cfg: &PipelineConfig,
    tasks: &[T],
    factory: impl Fn(&T, usize) -> Result<Box<dyn Policy>, seeker_core::agent::AgentError> + Sync,
    reg: &mut ToolRegistry,
    judge_client: Option<&dyn ChatModel>,
) -> Result<EvalReport, CliError> {
    let judge = match judge_client {
        Some(c) => Judge::Model(c),
        None => Judge::Exact,
    };
    run_eval(tasks, factory, reg, &cfg.eval_config(), judge, cfg.workers).map_err(|e| CliError::Data(e.to_string()))
}

pub fn cmd_eval(cfg: &PipelineConfig, tasks_path: Option<&Path>, benchmark: Option<&Path>) -> Result<String, CliError> {
    let needs_model = cfg.eval.policy == PolicyKind::Model || cfg.eval.judge == JudgeKind::Model;
    let model: Option<Arc<dyn ChatModel>> = if needs_model { Some(client(cfg)? as Arc<dyn ChatModel>) } else { None };
    let judge_client = match cfg.eval.judge {
        JudgeKind::Model => model.as_deref(),
        JudgeKind::NormalizedExact => None,
    };
    let benchmark = match (benchmark, tasks_path) {
        (Some(b), _) => Some(b.to_path_buf()),
        (None, None) => cfg.eval.benchmark.clone(),
        (None, Some(_)) => None,
    };
    let report = match benchmark {
        Some(p) => {
            if cfg.eval.policy != PolicyKind::Model {
                return Err(CliError::Config("benchmark files carry no evidence paths; use the model policy".into()));
            }
            let recs: Vec<BenchmarkRecord> = read_benchmark(open(&p)?).map_err(data(&p))?;
            let mut reg = registry(SimWorld::from_pages(Vec::new(), Vec::new()), cfg);
            let m = model.clone().expect("model client");
            let prompt = cfg.rollout.prompt.clone();
            let factory = move |_: &BenchmarkRecord, _: usize| -> Result<Box<dyn Policy>, seeker_core::agent::AgentError> {
                Ok(Box::new(model_policy(Arc::clone(&m), &prompt).expect("prompt validated with the config")))
            };
            eval_report(cfg, &recs, factory, &mut reg, judge_client)?
        }
        None => {
            let p = tasks_path.map(Path::to_path_buf).unwrap_or_else(|| cfg.out("tasks.jsonl"));
            let tasks = read_tasks(&p)?;
            let g = graph(cfg)?;
            let mut reg = registry(render_corpus(&g), cfg);
            let inner = make_policy(cfg.eval.policy, cfg, &g, model.clone());
            eval_report(cfg, &tasks, |t, _| inner(t), &mut reg, judge_client)?
        }
    };
    write_atomic(&cfg.out("eval.json"), &pretty(&report))?;
    write_atomic(&cfg.out("eval.csv"), report.summary_csv().as_bytes())?;
    Ok(format!(
        "eval: accuracy={} correct={} incorrect={} unjudged={} failed={} mean_tool_calls={:.2} -> {}",
        report.accuracy,
        report.correct,
        report.incorrect,
        report.unjudged,
        report.failed,
        report.mean_tool_calls,
        cfg.out("eval.json").display()
    ))
}

pub fn execute(cli: &Cli) -> Result<String, CliError> {
    let cfg = resolve_config(cli)?;
    match &cli.command {
        Command::GraphGen => cmd_graph_gen(&cfg),
        Command::Synth => cmd_synth(&cfg),
        Command::Rollout { tasks } => cmd_rollout(&cfg, tasks.as_deref()),
        Command::Filter { input, lenient } => cmd_filter(&cfg, input.as_deref(), *lenient),
        Command::Stats { input } => cmd_stats(&cfg, input.as_deref()),
        Command::Export { input } => cmd_export(&cfg, input.as_deref()),
        Command::Eval { tasks, benchmark } => cmd_eval(&cfg, tasks.as_deref(), benchmark.as_deref()),
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(summary) => {
            println!("{summary}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
