//! Command-line operations: single runs, benchmark suites, benchmark
//! generation and summaries over result directories.
//!
//! Every command writes under its `--out` directory. Remote credentials are
//! read from `HIERTOOL_API_KEY` only.

mod generate;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use tracing::{info, warn};

use crate::catalog::{ApiIdentifier, ApiUniverse};
use crate::error::{Error, Result};
use crate::eval::{collect_stats, GroundTruth, Judge, PassRateReport, Query, ReportRow, RunStats};
use crate::llm::{BudgetMeter, ChatBackend, RemoteBackend, RemoteConfig, ScriptedBackend, DEFAULT_TOKEN_BUDGET};
use crate::prompts::PromptSet;
use crate::reflection::{run_closed_loop, LoopConfig, RunStatus, DEFAULT_MAX_ROUNDS};
use crate::retriever::{RetrieverConfig, RunContext, SolvabilityPolicy, DEFAULT_MAX_TOOLS, DEFAULT_POOL_CAP};
use crate::solver::{SolverConfig, SolverStrategy, DEFAULT_MAX_API_CALLS};
use crate::trace::Trace;

pub use generate::{cmd_generate_bench, GenerateOptions, GenerateSummary, GENERATOR_META_CALL_LIMIT};

pub const API_KEY_ENV: &str = "HIERTOOL_API_KEY";

#[derive(Debug, Parser)]
#[command(name = "hiertool", version, about = "Hierarchical API retrieval agents with a self-reflecting solver")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve one query with the closed retrieve/solve/reflect loop.
    Run(RunArgs),
    /// Run every query of a benchmark file and report both pass rates.
    Bench(BenchArgs),
    /// Let a model explore the catalog and write new benchmark queries.
    Generate(GenerateArgs),
    /// Summarize a directory of result files.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JudgeKind {
    Oracle,
    Llm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StrategyArg {
    Dfsdt,
    Cot,
}

#[derive(Debug, Clone, Args)]
pub struct EngineArgs {
    /// Catalog JSON file.
    #[arg(long)]
    pub universe: PathBuf,
    /// Scripted scenario file; selects the offline backend.
    #[arg(long, conflicts_with = "endpoint")]
    pub scenario: Option<PathBuf>,
    /// OpenAI-compatible endpoint; selects the remote backend.
    #[arg(long, requires = "model")]
    pub endpoint: Option<String>,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub temperature: Option<f64>,
    /// Forwarded to the remote backend.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum, default_value = "oracle")]
    pub judge: JudgeKind,
    /// Prompt overrides (JSON object keyed by prompt id).
    #[arg(long)]
    pub prompts: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_MAX_ROUNDS)]
    pub max_rounds: usize,
    #[arg(long, default_value_t = DEFAULT_POOL_CAP)]
    pub pool_cap: usize,
    #[arg(long, default_value_t = DEFAULT_MAX_TOOLS)]
    pub max_tools: usize,
    #[arg(long, default_value_t = DEFAULT_MAX_API_CALLS)]
    pub max_calls: usize,
    /// Token budget per query.
    #[arg(long, default_value_t = DEFAULT_TOKEN_BUDGET)]
    pub budget: u64,
    #[arg(long, value_enum, default_value = "dfsdt")]
    pub strategy: StrategyArg,
    /// Sequential agent scheduling and sequential queries.
    #[arg(long)]
    pub deterministic: bool,
    #[arg(long, default_value_t = 4)]
    pub workers: usize,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub engine: EngineArgs,
    /// Query text; taken from the ground-truth file when omitted.
    #[arg(long)]
    pub query: Option<String>,
    #[arg(long, default_value = "query")]
    pub query_id: String,
    /// Benchmark file holding the oracle's ground truth for `--query-id`.
    #[arg(long)]
    pub ground_truth: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub engine: EngineArgs,
    #[arg(long)]
    pub benchmark: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub engine: EngineArgs,
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    /// Attempts allowed across all instances; defaults to three per instance.
    #[arg(long)]
    pub max_attempts: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct ReportArgs {
    pub dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendChoice {
    Scripted(PathBuf),
    Remote { endpoint: String, model: String },
}

/// Validated engine settings.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub universe: PathBuf,
    pub backend: BackendChoice,
    pub judge: JudgeKind,
    pub prompts: Option<PathBuf>,
    pub loop_config: LoopConfig,
    pub budget: u64,
    pub out: PathBuf,
    pub deterministic: bool,
    pub seed: Option<u64>,
    pub temperature: Option<f64>,
    pub workers: usize,
}

impl RunConfig {
    pub fn from_args(args: &EngineArgs) -> Result<Self> {
        let backend = match (&args.scenario, &args.endpoint, &args.model) {
            (Some(path), None, _) => BackendChoice::Scripted(path.clone()),
            (None, Some(endpoint), Some(model)) => BackendChoice::Remote {
                endpoint: endpoint.clone(),
                model: model.clone(),
            },
            (None, Some(_), None) => return Err(Error::Config("--endpoint needs --model".into())),
            (None, None, _) => return Err(Error::Config("choose a backend: --scenario or --endpoint".into())),
            (Some(_), Some(_), _) => {
                return Err(Error::Config("--scenario and --endpoint are mutually exclusive".into()))
            }
        };
        let config = Self {
            universe: args.universe.clone(),
            backend,
            judge: args.judge,
            prompts: args.prompts.clone(),
            loop_config: LoopConfig {
                max_rounds: args.max_rounds,
                retriever: RetrieverConfig {
                    max_tools: args.max_tools,
                    pool_cap: args.pool_cap,
                    solvability: SolvabilityPolicy::Judge,
                    deterministic: args.deterministic,
                    workers: args.workers,
                    ..RetrieverConfig::default()
                },
                solver: SolverConfig {
                    max_api_calls: args.max_calls,
                    strategy: match args.strategy {
                        StrategyArg::Dfsdt => SolverStrategy::Dfsdt,
                        StrategyArg::Cot => SolverStrategy::Cot,
                    },
                    ..SolverConfig::default()
                },
            },
            budget: args.budget,
            out: args.out.clone(),
            deterministic: args.deterministic,
            seed: args.seed,
            temperature: args.temperature,
            workers: args.workers,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.deterministic && matches!(self.backend, BackendChoice::Remote { .. }) {
            return Err(Error::Config(
                "--deterministic needs a scripted backend; remote models are not reproducible".into(),
            ));
        }
        if self.budget == 0 {
            return Err(Error::Config("token budget must be positive".into()));
        }
        if self.loop_config.solver.max_api_calls == 0 {
            return Err(Error::Config("max calls must be at least 1".into()));
        }
        self.loop_config.retriever.validate()
    }

    /// Loads the universe, prompts and backend.
    pub fn load(&self) -> Result<Engine> {
        let universe = ApiUniverse::load_path(&self.universe)?;
        let prompts = match &self.prompts {
            Some(path) => PromptSet::load_path(path)?,
            None => PromptSet::default(),
        };
        let backend: Arc<dyn ChatBackend> = match &self.backend {
            BackendChoice::Scripted(path) => Arc::new(ScriptedBackend::load_path(path)?),
            BackendChoice::Remote { endpoint, model } => {
                let mut remote = RemoteConfig::new(endpoint.clone(), model.clone());
                remote.api_key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty());
                remote.temperature = self.temperature;
                remote.seed = self.seed;
                if remote.api_key.is_none() {
                    warn!("{API_KEY_ENV} is not set; sending requests without a bearer token");
                }
                Arc::new(RemoteBackend::new(remote)?)
            }
        };
        Ok(Engine {
            universe,
            backend,
            prompts: Arc::new(prompts),
        })
    }

    fn judge(&self, engine: &Engine, truth: BTreeMap<String, GroundTruth>) -> Judge {
        match self.judge {
            JudgeKind::Oracle => Judge::Oracle(truth),
            JudgeKind::Llm => Judge::Llm {
                backend: engine.backend.clone(),
                prompts: engine.prompts.clone(),
            },
        }
    }
}

pub struct Engine {
    pub universe: ApiUniverse,
    pub backend: Arc<dyn ChatBackend>,
    pub prompts: Arc<PromptSet>,
}

// --- benchmark files ---

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchQuery {
    pub id: String,
    pub text: String,
    #[serde(default)]
    pub ground_truth: GroundTruth,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_answer: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Benchmark {
    pub queries: Vec<BenchQuery>,
}

impl Benchmark {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let bench: Self = serde_json::from_str(text).map_err(Error::from_json)?;
        let mut seen = std::collections::BTreeSet::new();
        for q in &bench.queries {
            if !seen.insert(q.id.as_str()) {
                return Err(Error::Duplicate {
                    kind: "query",
                    name: q.id.clone(),
                });
            }
        }
        Ok(bench)
    }

    pub fn load_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }

    pub fn truth(&self) -> BTreeMap<String, GroundTruth> {
        self.queries
            .iter()
            .map(|q| (q.id.clone(), q.ground_truth.clone()))
            .collect()
    }

    pub fn get(&self, id: &str) -> Option<&BenchQuery> {
        self.queries.iter().find(|q| q.id == id)
    }
}

// --- result documents ---

/// One query's outcome as written to disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultDoc {
    pub query_id: String,
    pub query: String,
    pub status: String,
    pub solved: bool,
    /// Solvability of the final pool; `None` if it could not be judged.
    pub solvable: Option<bool>,
    pub solution: Option<String>,
    pub rationale: String,
    pub rounds: usize,
    pub pool_sizes: Vec<usize>,
    pub final_pool: Vec<ApiIdentifier>,
    /// Absent when the run failed before producing statistics.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stats: Option<RunStats>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace_path: Option<String>,
}

impl ResultDoc {
    pub fn row(&self) -> ReportRow {
        ReportRow {
            query_id: self.query_id.clone(),
            // An unjudged pool counts as solvable so it cannot inflate
            // the toolllm rate.
            solvable: self.solvable.unwrap_or(true),
            solved: self.solved,
            status: self.status.clone(),
            rationale: self.rationale.clone(),
        }
    }
}

struct QueryRun {
    doc: ResultDoc,
    trace: Trace,
    registry: Option<String>,
}

fn run_query(query: &Query, config: &RunConfig, engine: &Engine, judge: &Judge) -> QueryRun {
    let meter = BudgetMeter::new(config.budget);
    let trace = Trace::new();
    let ctx = RunContext {
        universe: &engine.universe,
        backend: engine.backend.as_ref(),
        prompts: &engine.prompts,
        meter: &meter,
        trace: &trace,
        judge,
    };
    let run = match run_closed_loop(query, ctx, &config.loop_config) {
        Ok(run) => run,
        Err(e) => {
            warn!(query = %query.id, error = %e, "query failed; counted as unsolved");
            let doc = ResultDoc {
                query_id: query.id.clone(),
                query: query.text.clone(),
                status: RunStatus::Unsolved.as_str().into(),
                solved: false,
                solvable: None,
                solution: None,
                rationale: format!("error: {e}"),
                rounds: 0,
                pool_sizes: Vec::new(),
                final_pool: Vec::new(),
                stats: None,
                trace_path: None,
            };
            return QueryRun {
                doc,
                trace,
                registry: None,
            };
        }
    };
    // Final labelling is evaluation, not agent work: it gets its own meter.
    let eval_meter = BudgetMeter::new(u64::MAX);
    let solvable = match judge.judge_solvability(query, &run.result.final_pool, &engine.universe, &eval_meter) {
        Ok(s) => Some(s.is_solvable()),
        Err(e) => {
            warn!(query = %query.id, error = %e, "could not judge final pool");
            None
        }
    };
    let result = run.result;
    let doc = ResultDoc {
        query_id: result.query_id,
        query: query.text.clone(),
        status: result.status.as_str().into(),
        solved: result.status == RunStatus::Solved,
        solvable,
        solution: result.solution,
        rationale: result.verdict.rationale().to_string(),
        rounds: result.rounds,
        pool_sizes: result.pool_sizes,
        final_pool: result.final_pool,
        stats: Some(result.stats),
        trace_path: None,
    };
    let registry = serde_json::to_string_pretty(&run.state.registry).ok();
    QueryRun { doc, trace, registry }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn to_pretty<T: Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

/// File-name-safe form of a query id.
pub fn file_stem(id: &str) -> String {
    let stem: String = id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' })
        .collect();
    if stem.is_empty() || stem.starts_with('.') {
        format!("q{stem}")
    } else {
        stem
    }
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub doc: ResultDoc,
    pub result_path: PathBuf,
    pub exit_code: i32,
}

/// Runs one query. Writes `result.json`, `trace.jsonl` and `registry.json`
/// under the output directory; exit code 0 iff solved.
pub fn cmd_run(config: &RunConfig, query: &Query, truth: BTreeMap<String, GroundTruth>) -> Result<RunReport> {
    if config.judge == JudgeKind::Oracle && !truth.contains_key(&query.id) {
        return Err(Error::Config(format!(
            "the oracle judge needs ground truth for query {}; pass --ground-truth or use --judge llm",
            query.id
        )));
    }
    let engine = config.load()?;
    let judge = config.judge(&engine, truth);
    let QueryRun { mut doc, trace, registry } = run_query(query, config, &engine, &judge);
    let trace_path = config.out.join("trace.jsonl");
    write_file(&trace_path, &trace.to_jsonl())?;
    doc.trace_path = Some(trace_path.display().to_string());
    if let Some(registry) = registry {
        write_file(&config.out.join("registry.json"), &registry)?;
    }
    let result_path = config.out.join("result.json");
    write_file(&result_path, &to_pretty(&doc)?)?;
    info!(status = %doc.status, path = %result_path.display(), "run finished");
    let exit_code = if doc.solved { 0 } else { 1 };
    Ok(RunReport {
        doc,
        result_path,
        exit_code,
    })
}

/// Resolves `run` arguments into a query plus the oracle's ground truth.
pub fn run_inputs(args: &RunArgs) -> Result<(Query, BTreeMap<String, GroundTruth>)> {
    let bench = match &args.ground_truth {
        Some(path) => Some(Benchmark::load_path(path)?),
        None => None,
    };
    let text = match (&args.query, &bench) {
        (Some(text), _) => text.clone(),
        (None, Some(b)) => match b.get(&args.query_id) {
            Some(q) => q.text.clone(),
            None => return Err(Error::Config(format!("query {} not in the ground-truth file", args.query_id))),
        },
        (None, None) => return Err(Error::Config("--query is required without --ground-truth".into())),
    };
    let truth = bench.map(|b| b.truth()).unwrap_or_default();
    Ok((Query::new(args.query_id.clone(), text), truth))
}

#[derive(Debug, Clone)]
pub struct BenchSummary {
    pub report: PassRateReport,
    pub docs: Vec<ResultDoc>,
}

/// Runs every benchmark query with its own budget and trace. Failures
/// become unsolved rows. Writes per-query results and traces plus
/// `report.json`, `report.csv`, `stats.json` and `stats.txt`.
pub fn cmd_bench(config: &RunConfig, benchmark: &Path) -> Result<BenchSummary> {
    let bench = Benchmark::load_path(benchmark)?;
    if bench.queries.is_empty() {
        return Err(Error::Invalid("no queries".into()));
    }
    let engine = config.load()?;
    let judge = config.judge(&engine, bench.truth());
    let queries: Vec<Query> = bench.queries.iter().map(|q| Query::new(q.id.clone(), q.text.clone())).collect();

    let slots: Vec<Mutex<Option<QueryRun>>> = queries.iter().map(|_| Mutex::new(None)).collect();
    let workers = if config.deterministic { 1 } else { config.workers.min(queries.len()) };
    let next = AtomicUsize::new(0);
    let work = || loop {
        let i = next.fetch_add(1, Ordering::SeqCst);
        let Some(q) = queries.get(i) else { break };
        info!(query = %q.id, "running");
        let run = run_query(q, config, &engine, &judge);
        *slots[i].lock().expect("slot lock") = Some(run);
    };
    if workers <= 1 {
        work();
    } else {
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(work);
            }
        });
    }

    let mut docs = Vec::with_capacity(queries.len());
    for slot in slots {
        let QueryRun { mut doc, trace, .. } = slot.into_inner().expect("slot lock").expect("every query ran");
        let stem = file_stem(&doc.query_id);
        let rel = format!("traces/{stem}.jsonl");
        write_file(&config.out.join(&rel), &trace.to_jsonl())?;
        doc.trace_path = Some(rel);
        write_file(&config.out.join(format!("results/{stem}.json")), &to_pretty(&doc)?)?;
        docs.push(doc);
    }
    let report = PassRateReport::from_rows(docs.iter().map(ResultDoc::row).collect());
    report.write(config.out.join("report.json"), config.out.join("report.csv"))?;
    let stats_rows: Vec<Value> = docs.iter().map(serde_json::to_value).collect::<std::result::Result<_, _>>()?;
    let stats = collect_stats(&stats_rows);
    write_file(&config.out.join("stats.json"), &to_pretty(&stats)?)?;
    write_file(&config.out.join("stats.txt"), &stats.to_text())?;
    Ok(BenchSummary { report, docs })
}

#[derive(Debug, Clone)]
pub struct ReportSummary {
    pub text: String,
    pub report: PassRateReport,
    pub skipped: Vec<String>,
}

/// Summarizes `*.json` result files in `dir` (or in `dir/results`).
pub fn cmd_report(dir: &Path) -> Result<ReportSummary> {
    let nested = dir.join("results");
    let source = if nested.is_dir() { nested } else { dir.to_path_buf() };
    let entries = std::fs::read_dir(&source).map_err(|e| Error::io(&source, e))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    let mut docs = Vec::new();
    let mut raw = Vec::new();
    let mut skipped = Vec::new();
    for path in &paths {
        let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        let parsed = std::fs::read_to_string(path)
            .map_err(|e| e.to_string())
            .and_then(|t| serde_json::from_str::<Value>(&t).map_err(|e| e.to_string()))
            .and_then(|v| {
                serde_json::from_value::<ResultDoc>(v.clone())
                    .map(|d| (d, v))
                    .map_err(|e| e.to_string())
            });
        match parsed {
            Ok((doc, value)) => {
                docs.push(doc);
                raw.push(value);
            }
            Err(e) => {
                warn!(file = %name, error = %e, "skipping unreadable result file");
                skipped.push(format!("{name}: {e}"));
            }
        }
    }
    if docs.is_empty() {
        return Err(Error::Invalid(format!("no result files in {}", source.display())));
    }
    let report = PassRateReport::from_rows(docs.iter().map(ResultDoc::row).collect());
    let stats = collect_stats(&raw);
    let rate = |r: Option<f64>| r.map(|v| format!("{v:.4}")).unwrap_or_else(|| "undefined".into());
    let mut text = stats.to_text();
    text.push_str(&format!(
        "pass rate (toolllm) {} [non-solvable {}, solved {}, unsolved {}]\n",
        rate(report.rate_eq1),
        report.toolllm.non_solvable,
        report.toolllm.solved,
        report.toolllm.unsolved
    ));
    text.push_str(&format!(
        "pass rate (revised) {} [solved {}, unsolved {}]\n",
        rate(report.rate_eq2),
        report.revised.solved,
        report.revised.unsolved
    ));
    for note in &skipped {
        text.push_str(&format!("skipped file: {note}\n"));
    }
    Ok(ReportSummary { text, report, skipped })
}

/// Dispatches a parsed command line; returns the process exit code.
pub fn main_with(cli: Cli) -> i32 {
    let outcome = match cli.command {
        Command::Run(args) => RunConfig::from_args(&args.engine).and_then(|config| {
            let (query, truth) = run_inputs(&args)?;
            let report = cmd_run(&config, &query, truth)?;
            println!("{} {}", report.doc.status, report.result_path.display());
            Ok(report.exit_code)
        }),
        Command::Bench(args) => RunConfig::from_args(&args.engine).and_then(|config| {
            let summary = cmd_bench(&config, &args.benchmark)?;
            let rate = |r: Option<f64>| r.map(|v| format!("{v:.4}")).unwrap_or_else(|| "undefined".into());
            println!(
                "queries {}  pass rate toolllm {}  revised {}",
                summary.docs.len(),
                rate(summary.report.rate_eq1),
                rate(summary.report.rate_eq2)
            );
            Ok(0)
        }),
        Command::Generate(args) => RunConfig::from_args(&args.engine).and_then(|config| {
            let options = GenerateOptions {
                count: args.count,
                max_attempts: args.max_attempts.unwrap_or(args.count.saturating_mul(3).max(1)),
            };
            let summary = cmd_generate_bench(&config, &options)?;
            println!("generated {} of {} -> {}", summary.benchmark.queries.len(), args.count, summary.path.display());
            Ok(0)
        }),
        Command::Report(args) => cmd_report(&args.dir).map(|summary| {
            print!("{}", summary.text);
            0
        }),
    };
    outcome.unwrap_or_else(|e| {
        eprintln!("error: {e}");
        2
    })
}
