//! Benchmark generation: a model explores the catalog, keeps a working set
//! of APIs, tests them, and submits a query with its answer. Each instance
//! is accepted only if the judge confirms the answer against the recorded
//! test calls.

use std::cell::{Cell, RefCell};
use std::path::PathBuf;

use serde_json::{json, Map, Value};
use tracing::{info, warn};

use super::{to_pretty, write_file, BenchQuery, Benchmark, JudgeKind, RunConfig};
use crate::catalog::ApiIdentifier;
use crate::error::{Error, Result};
use crate::eval::{oracle_verdict, GroundTruth, Judge, Query};
use crate::llm::{run_function_loop, BudgetMeter, FunctionCallRequest, FunctionSchema, LoopOptions, LoopStop, Message, ParamSchema};
use crate::prompts::PromptId;
use crate::retriever::functions as f;
use crate::retriever::{
    api_list, api_ref_text, details_json, parse_api_ref, schema_add_apis, schema_get_api_details,
    schema_get_apis_in_tool, schema_get_tool_descriptions, schema_get_tools_in_category, schema_remove_apis,
    string_list, string_param, tool_descriptions_json, tools_in_category_text, CandidatePool,
};
use crate::solver::{ApiCallRecord, FinishOutcome};
use crate::trace::{EventKind, Trace};

/// Exploration and selection calls allowed per instance.
pub const GENERATOR_META_CALL_LIMIT: usize = 20;
pub const EXECUTE_API: &str = "execute_api";
pub const GENERATOR_FINISH: &str = "Finish";
const WORKING_SET_CAP: usize = 64;

#[derive(Debug, Clone)]
pub struct GenerateOptions {
    pub count: usize,
    /// Attempts across all instances, failed or not.
    pub max_attempts: usize,
}

#[derive(Debug, Clone)]
pub struct GenerateSummary {
    pub benchmark: Benchmark,
    pub path: PathBuf,
    pub attempts: usize,
    /// One note per discarded attempt.
    pub discarded: Vec<String>,
}

fn schemas() -> Vec<FunctionSchema> {
    vec![
        schema_get_tools_in_category(),
        schema_get_tool_descriptions(),
        schema_get_apis_in_tool(),
        schema_get_api_details(),
        schema_add_apis(),
        schema_remove_apis(),
        FunctionSchema::new(EXECUTE_API, "Call an API with the given arguments and return its response.")
            .param(string_param("api", "API as category/tool/api or tool/api"))
            .param(ParamSchema::new("arguments", "object", false, "argument values by parameter name")),
        FunctionSchema::new(GENERATOR_FINISH, "Submit the generated query with its answer.")
            .param(string_param("query", "the user query"))
            .param(string_param("answer", "the answer to the query")),
    ]
}

struct Attempt {
    query: String,
    answer: String,
    working_set: Vec<ApiIdentifier>,
    calls: Vec<ApiCallRecord>,
}

enum AttemptError {
    Discard(String),
    Fatal(Error),
}

fn attempt(
    config: &RunConfig,
    engine: &super::Engine,
    instance: usize,
    try_no: usize,
    trace: &Trace,
) -> std::result::Result<Attempt, AttemptError> {
    let universe = &engine.universe;
    let categories = universe.category_names().join(", ");
    let system = engine
        .prompts
        .render(PromptId::BenchmarkGen, &[("categories", &categories)])
        .map_err(AttemptError::Fatal)?;
    let seed = vec![
        Message::system(system),
        Message::user(format!("Create benchmark query {instance} (attempt {try_no}).")),
    ];
    let agent = format!("gen-{instance}-{try_no}");
    let pool = RefCell::new(CandidatePool::new(WORKING_SET_CAP));
    let calls: RefCell<Vec<ApiCallRecord>> = RefCell::new(Vec::new());
    let meta_calls = Cell::new(0usize);
    let over_limit = Cell::new(false);
    let submitted: RefCell<Option<(String, String)>> = RefCell::new(None);

    let dispatch = |call: &FunctionCallRequest| -> String {
        let name = call.name.as_str();
        let is_meta = matches!(
            name,
            f::GET_TOOLS_IN_CATEGORY | f::GET_TOOL_DESCRIPTIONS | f::GET_APIS_IN_TOOL | f::GET_API_DETAILS | f::ADD_APIS | f::REMOVE_APIS
        );
        if is_meta {
            meta_calls.set(meta_calls.get() + 1);
            if meta_calls.get() > GENERATOR_META_CALL_LIMIT {
                over_limit.set(true);
                return format!("error: more than {GENERATOR_META_CALL_LIMIT} meta function calls");
            }
        }
        trace.record(&agent, "generator", EventKind::FunctionCall, json!({"name": name}));
        match name {
            f::GET_TOOLS_IN_CATEGORY => tools_in_category_text(universe, call),
            f::GET_TOOL_DESCRIPTIONS => match string_list(call, "tools") {
                Some(tools) => tool_descriptions_json(universe, &tools, None),
                None => "error: missing argument tools".into(),
            },
            f::GET_APIS_IN_TOOL => match call.arg_str("tool_name").or_else(|| call.arg_str("tool")) {
                None => "error: missing argument tool_name".into(),
                Some(tool) => match universe.get_apis_in_tool(tool, call.arg_str("category_name")) {
                    Ok(apis) => json!(apis).to_string(),
                    Err(e) => format!("error: {e}"),
                },
            },
            f::GET_API_DETAILS => {
                let list: Vec<Value> = api_list(call)
                    .iter()
                    .map(|v| match parse_api_ref(v, None, universe) {
                        Some(id) => details_json(universe, &id),
                        None => json!({"api": api_ref_text(v), "error": "unparseable API reference"}),
                    })
                    .collect();
                Value::Array(list).to_string()
            }
            f::ADD_APIS => {
                let mut ids = Vec::new();
                let mut rejected = Vec::new();
                for v in api_list(call) {
                    match parse_api_ref(&v, None, universe) {
                        Some(id) if universe.api(&id).is_some() => ids.push(id),
                        _ => rejected.push(api_ref_text(&v)),
                    }
                }
                match pool.borrow_mut().add(ids) {
                    Ok(out) => json!({"accepted": out.accepted.len(), "unknown": rejected}).to_string(),
                    Err(e) => format!("error: {e}"),
                }
            }
            f::REMOVE_APIS => {
                let mut removed = 0;
                for v in api_list(call) {
                    if let Some(id) = parse_api_ref(&v, None, universe) {
                        removed += usize::from(pool.borrow_mut().remove(&id));
                    }
                }
                json!({"removed": removed}).to_string()
            }
            EXECUTE_API => {
                let Some(id) = call
                    .arguments
                    .get("api")
                    .and_then(|v| parse_api_ref(v, None, universe))
                else {
                    return "error: missing or unparseable argument api".into();
                };
                let args: Map<String, Value> = match call.arguments.get("arguments") {
                    Some(Value::Object(m)) => m.clone(),
                    _ => Map::new(),
                };
                let result = universe.execute_api(&id, &args);
                let text = match &result {
                    Ok(body) => body.clone(),
                    Err(e) => format!("error: {e}"),
                };
                calls.borrow_mut().push(ApiCallRecord {
                    id,
                    args,
                    result,
                });
                text
            }
            GENERATOR_FINISH => {
                let query = call.arg_str("query").unwrap_or_default().trim().to_string();
                let answer = call.arg_str("answer").unwrap_or_default().trim().to_string();
                *submitted.borrow_mut() = Some((query, answer));
                "submitted".into()
            }
            other => format!("function {other} does not exist"),
        }
    };
    let stop = |reply: &crate::llm::ModelReply, _: &[Message]| -> Option<String> {
        if over_limit.get() {
            return Some("meta call limit".into());
        }
        reply
            .call()
            .filter(|c| c.name == GENERATOR_FINISH)
            .map(|_| GENERATOR_FINISH.to_string())
    };
    let meter = BudgetMeter::new(config.budget);
    let options = LoopOptions {
        max_iterations: 4 * GENERATOR_META_CALL_LIMIT,
        ..LoopOptions::default()
    };
    let out = run_function_loop(engine.backend.as_ref(), seed, &schemas(), dispatch, stop, &meter, options)
        .map_err(AttemptError::Fatal)?;
    if over_limit.get() {
        return Err(AttemptError::Discard(format!("exceeded {GENERATOR_META_CALL_LIMIT} meta function calls")));
    }
    let Some((query, answer)) = submitted.into_inner() else {
        let why = match out.stop {
            LoopStop::Budget => "token budget exhausted".to_string(),
            LoopStop::Text => "model replied without submitting".to_string(),
            other => format!("no submission ({other:?})"),
        };
        return Err(AttemptError::Discard(why));
    };
    if query.is_empty() || answer.is_empty() {
        return Err(AttemptError::Discard("empty query or answer".into()));
    }
    let working_set = pool.into_inner().entries().to_vec();
    if working_set.is_empty() {
        return Err(AttemptError::Discard("empty working set".into()));
    }
    Ok(Attempt {
        query,
        answer,
        working_set,
        calls: calls.into_inner(),
    })
}

fn verify(config: &RunConfig, engine: &super::Engine, id: &str, a: &Attempt) -> Result<crate::eval::Verdict> {
    let truth = GroundTruth {
        required_apis: a.working_set.clone(),
        answer_fragments: Vec::new(),
    };
    match config.judge {
        JudgeKind::Oracle => Ok(oracle_verdict(&truth, &a.answer, &a.calls)),
        JudgeKind::Llm => {
            let judge = Judge::Llm {
                backend: engine.backend.clone(),
                prompts: engine.prompts.clone(),
            };
            // Every working-set API must still have been exercised.
            if let crate::eval::Verdict::Unsolved(why) = oracle_verdict(&truth, &a.answer, &a.calls) {
                return Ok(crate::eval::Verdict::Unsolved(why));
            }
            let outcome = FinishOutcome::GiveSolution { answer: a.answer.clone() };
            judge.judge_solution(&Query::new(id, a.query.clone()), &outcome, &a.calls, &BudgetMeter::new(u64::MAX))
        }
    }
}

/// Generates up to `count` verified instances into `<out>/benchmark.json`.
/// Hitting the attempt cap leaves a partial benchmark and a warning.
pub fn cmd_generate_bench(config: &RunConfig, options: &GenerateOptions) -> Result<GenerateSummary> {
    if options.count == 0 {
        return Err(Error::Config("--count must be at least 1".into()));
    }
    let engine = config.load()?;
    let trace = Trace::new();
    let mut bench = Benchmark::default();
    let mut discarded = Vec::new();
    let mut attempts = 0;
    let mut try_no = 0;
    while bench.queries.len() < options.count && attempts < options.max_attempts {
        attempts += 1;
        try_no += 1;
        let instance = bench.queries.len() + 1;
        let id = format!("gen-{instance}");
        match attempt(config, &engine, instance, try_no, &trace) {
            Ok(a) => match verify(config, &engine, &id, &a)? {
                v if v.is_solved() => {
                    info!(%id, apis = a.working_set.len(), "instance accepted");
                    bench.queries.push(BenchQuery {
                        id,
                        text: a.query,
                        ground_truth: GroundTruth {
                            required_apis: a.working_set,
                            answer_fragments: Vec::new(),
                        },
                        reference_answer: Some(a.answer),
                    });
                    try_no = 0;
                }
                v => {
                    warn!(%id, reason = %v.rationale(), "reference solution failed verification");
                    discarded.push(format!("{id} attempt {try_no}: verification failed: {}", v.rationale()));
                }
            },
            Err(AttemptError::Discard(why)) => {
                warn!(%id, %why, "instance discarded");
                discarded.push(format!("{id} attempt {try_no}: {why}"));
            }
            Err(AttemptError::Fatal(e)) => return Err(e),
        }
    }
    if bench.queries.len() < options.count {
        warn!(
            generated = bench.queries.len(),
            requested = options.count,
            "attempt cap reached; writing a partial benchmark"
        );
    }
    let path = config.out.join("benchmark.json");
    write_file(&path, &to_pretty(&bench)?)?;
    write_file(&config.out.join("generate_trace.jsonl"), &trace.to_jsonl())?;
    Ok(GenerateSummary {
        benchmark: bench,
        path,
        attempts,
        discarded,
    })
}
