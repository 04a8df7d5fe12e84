//! The closed retrieve → solve → judge loop with self-reflection.
//!
//! After a failed attempt the failure reason is appended to every
//! retriever agent's dialogue, and agents that never called `finish_search`
//! are resumed bottom-up: tool agents, then category agents, then the meta
//! agent. APIs the solver blamed are pruned from the pool for the rest of
//! the run, their calls are cut from the solver dialogue, and the solver
//! tries again from the cleaned dialogue.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::json;
use tracing::warn;

use crate::catalog::{ApiIdentifier, ApiUniverse};
use crate::error::{Error, Result};
use crate::eval::{Query, ReflectionCounts, RunStats, Verdict};
use crate::llm::Message;
use crate::prompts::{PromptId, PromptSet};
use crate::retriever::{
    drive_agents, run_retrieval, CandidatePool, Retrieval, RetrievalState, RetrievalStop,
    RetrieverConfig, RunContext, Tier,
};
use crate::solver::{
    render_pool_schemas, solve, task_description, ApiCallRecord, FinishOutcome, SolverConfig,
    SolverResult,
};
use crate::trace::EventKind;

pub const DEFAULT_MAX_ROUNDS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureOrigin {
    SolverGiveUp,
    JudgeUnsolved,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureReport {
    pub origin: FailureOrigin,
    pub reason: String,
    /// Function names as offered to the solver.
    pub blamed: Vec<String>,
}

/// Builds the report for a failed attempt. A give-up carries the solver's
/// reason and blame; otherwise the judge's rationale is used.
pub fn extract_failure(result: &SolverResult, verdict: &Verdict) -> Result<FailureReport> {
    match &result.outcome {
        FinishOutcome::GiveUp { reason, blamed } => Ok(FailureReport {
            origin: FailureOrigin::SolverGiveUp,
            reason: reason.clone(),
            blamed: blamed.clone(),
        }),
        FinishOutcome::GiveSolution { .. } if !verdict.is_solved() => Ok(FailureReport {
            origin: FailureOrigin::JudgeUnsolved,
            reason: verdict.rationale().to_string(),
            blamed: Vec::new(),
        }),
        FinishOutcome::GiveSolution { .. } => {
            Err(Error::Contract("extract_failure called on a solved attempt".into()))
        }
        FinishOutcome::TryBacktrack => Err(Error::Contract("backtrack is not a final outcome".into())),
    }
}

#[derive(Debug, Clone)]
pub struct RetrieverReflection {
    pub state: RetrievalState,
    /// Last stop reason; `None` when nothing was resumed.
    pub stop: Option<RetrievalStop>,
    /// Resumed agent ids in resume order.
    pub resumed: Vec<String>,
    pub exhausted: bool,
}

fn reflect_prompt(tier: Tier) -> PromptId {
    match tier {
        Tier::Meta => PromptId::ReflectMeta,
        Tier::Category => PromptId::ReflectCategory,
        Tier::Tool => PromptId::ReflectTool,
    }
}

/// Appends the failure reason to every agent and resumes the unfinished
/// ones tier by tier, stopping early once a tier ends on solvability,
/// a full pool or the budget.
pub fn reflect_retriever(
    report: &FailureReport,
    mut state: RetrievalState,
    query: &Query,
    ctx: RunContext<'_>,
    config: &RetrieverConfig,
) -> Result<RetrieverReflection> {
    for agent in state.registry.agents_mut() {
        let text = ctx
            .prompts
            .render(reflect_prompt(agent.tier()), &[("fail_reason", &report.reason)])?;
        agent.dialogue.push(Message::user(text));
        ctx.trace
            .record(&agent.id, agent.tier().as_str(), EventKind::Reflect, json!({"origin": report.origin}));
    }
    let nothing_to_resume = state.registry.all_finished();
    if nothing_to_resume {
        ctx.trace.record(
            "retriever",
            "retriever",
            EventKind::Warning,
            json!({"note": "reflection exhausted"}),
        );
        return Ok(RetrieverReflection {
            state,
            stop: None,
            resumed: Vec::new(),
            exhausted: true,
        });
    }
    state.pool.reopen();
    let mut resumed = Vec::new();
    let mut stop = None;
    for tier in [Tier::Tool, Tier::Category, Tier::Meta] {
        let ids: Vec<String> = state
            .registry
            .of_tier(tier)
            .filter(|a| !a.is_finished())
            .map(|a| a.id.clone())
            .collect();
        if ids.is_empty() {
            continue;
        }
        for id in &ids {
            let agent = state.registry.get_mut(id).expect("id from registry");
            agent.parked = false;
            agent.turns = 0;
            ctx.trace.record(id, tier.as_str(), EventKind::Resume, json!({"reason": report.reason}));
        }
        resumed.extend(ids.iter().cloned());
        let Retrieval { state: next, stop: s } = drive_agents(query, ctx, config, state, ids);
        state = next;
        stop = Some(s);
        if matches!(s, RetrievalStop::Solvable | RetrievalStop::PoolFull | RetrievalStop::Budget) {
            break;
        }
    }
    Ok(RetrieverReflection {
        state,
        stop,
        resumed,
        exhausted: false,
    })
}

/// Prunes blamed APIs, cuts their call/result pairs from `dialogue`, and
/// appends a fresh task message carrying the failure reason.
pub fn reflect_solver(
    report: &FailureReport,
    pool: &mut CandidatePool,
    dialogue: Vec<Message>,
    offered: &BTreeMap<String, ApiIdentifier>,
    query: &Query,
    universe: &ApiUniverse,
    prompts: &PromptSet,
) -> Result<Vec<Message>> {
    let mut cut: Vec<&str> = Vec::new();
    for name in &report.blamed {
        match offered.get(name) {
            Some(id) if pool.contains(id) => {
                pool.prune(id);
                cut.push(name);
            }
            Some(id) => {
                warn!(api = %id, "blamed API already absent from the pool");
                pool.prune(id);
                cut.push(name);
            }
            None => warn!(function = %name, "blamed function was never offered; ignored"),
        }
    }
    let mut cleaned = Vec::with_capacity(dialogue.len() + 1);
    let mut skip_result = false;
    for m in dialogue {
        if skip_result {
            skip_result = false;
            if m.call_result_for.is_some() {
                continue;
            }
        }
        if m.call.as_ref().is_some_and(|c| cut.contains(&c.name.as_str())) {
            skip_result = true;
            continue;
        }
        cleaned.push(m);
    }
    let schemas: Vec<_> = render_pool_schemas(pool.entries(), universe)
        .into_iter()
        .map(|(s, _)| s)
        .collect();
    let task = format!(
        "{}\nThe previous attempt did not solve the task. Reason: {}",
        task_description(query, &schemas),
        report.reason
    );
    cleaned.push(Message::user(prompts.render(PromptId::Solver, &[("task_description", &task)])?));
    Ok(cleaned)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LoopConfig {
    pub max_rounds: usize,
    pub retriever: RetrieverConfig,
    pub solver: SolverConfig,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self {
            max_rounds: DEFAULT_MAX_ROUNDS,
            retriever: RetrieverConfig::default(),
            solver: SolverConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Solved,
    Unsolved,
    GaveUp,
    BudgetExhausted,
}

impl RunStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            RunStatus::Solved => "solved",
            RunStatus::Unsolved => "unsolved",
            RunStatus::GaveUp => "gave_up",
            RunStatus::BudgetExhausted => "budget_exhausted",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalResult {
    pub query_id: String,
    pub status: RunStatus,
    pub solution: Option<String>,
    /// Index of the last round run; round 0 is the first attempt.
    pub rounds: usize,
    pub stats: RunStats,
    /// Pool size after each round's retrieval, before pruning.
    pub pool_sizes: Vec<usize>,
    pub final_pool: Vec<ApiIdentifier>,
    pub verdict: Verdict,
}

#[derive(Debug, Clone)]
pub struct ClosedLoopRun {
    pub result: FinalResult,
    pub state: RetrievalState,
    pub last_attempt: SolverResult,
    /// Successful-path calls across rounds, pruned APIs excluded.
    pub history: Vec<ApiCallRecord>,
}

pub fn run_closed_loop(query: &Query, ctx: RunContext<'_>, config: &LoopConfig) -> Result<ClosedLoopRun> {
    let tokens_before = ctx.meter.used();
    let calls_before = ctx.meter.model_calls();
    let mut reflections = ReflectionCounts::default();
    let mut pool_sizes = Vec::new();

    ctx.trace.record("loop", "loop", EventKind::Round, json!({"round": 0}));
    let retrieval = run_retrieval(query, ctx, &config.retriever, None)?;
    let mut state = retrieval.state;
    pool_sizes.push(state.pool.len());
    let mut attempt = solve(
        query,
        &state.pool,
        ctx.universe,
        ctx.backend,
        ctx.prompts,
        &config.solver,
        ctx.meter,
        ctx.trace,
        None,
    )?;
    let mut history = attempt.path_calls.clone();
    let mut verdict = judge(query, &attempt, &history, &ctx)?;
    let mut round = 0;
    let mut out_of_budget = ctx.meter.is_exhausted();

    while !verdict.is_solved() && round < config.max_rounds && !out_of_budget {
        round += 1;
        ctx.trace.record("loop", "loop", EventKind::Round, json!({"round": round}));
        let report = extract_failure(&attempt, &verdict)?;
        let pool_before = state.pool.entries().to_vec();

        let reflected = reflect_retriever(&report, state, query, ctx, &config.retriever)?;
        state = reflected.state;
        for id in &reflected.resumed {
            if let Some(a) = state.registry.get(id) {
                match a.tier() {
                    Tier::Meta => reflections.meta += 1,
                    Tier::Category => reflections.category += 1,
                    Tier::Tool => reflections.tool += 1,
                }
            }
        }
        pool_sizes.push(state.pool.len());
        if reflected.stop == Some(RetrievalStop::Budget) {
            out_of_budget = true;
            break;
        }

        let seed = reflect_solver(
            &report,
            &mut state.pool,
            attempt.dialogue.clone(),
            &attempt.offered,
            query,
            ctx.universe,
            ctx.prompts,
        )?;
        reflections.solver += 1;
        history.retain(|c| !state.pool.pruned().contains(&c.id));

        if state.pool.entries() == pool_before.as_slice() && state.registry.all_finished() {
            ctx.trace.record(
                "loop",
                "loop",
                EventKind::Stop,
                json!({"reason": "no progress", "round": round}),
            );
            break;
        }

        attempt = solve(
            query,
            &state.pool,
            ctx.universe,
            ctx.backend,
            ctx.prompts,
            &config.solver,
            ctx.meter,
            ctx.trace,
            Some(seed),
        )?;
        history.extend(attempt.path_calls.iter().cloned());
        verdict = judge(query, &attempt, &history, &ctx)?;
        out_of_budget = ctx.meter.is_exhausted();
    }

    let status = if verdict.is_solved() {
        RunStatus::Solved
    } else if out_of_budget {
        RunStatus::BudgetExhausted
    } else if matches!(attempt.outcome, FinishOutcome::GiveUp { .. }) {
        RunStatus::GaveUp
    } else {
        RunStatus::Unsolved
    };
    let stats = RunStats {
        tokens: ctx.meter.used() - tokens_before,
        model_calls: ctx.meter.model_calls() - calls_before,
        reflection_rounds: round as u64,
        reflections,
        candidates: state.pool.len() as u64,
        agents: state.registry.counts(),
    };
    ctx.trace.record(
        "loop",
        "loop",
        EventKind::Stop,
        json!({"status": status.as_str(), "rounds": round}),
    );
    let result = FinalResult {
        query_id: query.id.clone(),
        status,
        solution: attempt.outcome.answer().map(str::to_string),
        rounds: round,
        stats,
        pool_sizes,
        final_pool: state.pool.entries().to_vec(),
        verdict,
    };
    Ok(ClosedLoopRun {
        result,
        state,
        last_attempt: attempt,
        history,
    })
}

fn judge(query: &Query, attempt: &SolverResult, history: &[ApiCallRecord], ctx: &RunContext<'_>) -> Result<Verdict> {
    let verdict = match ctx.judge.judge_solution(query, &attempt.outcome, history, ctx.meter) {
        Ok(v) => v,
        Err(e) if e.is_budget() => Verdict::Unsolved("token budget exhausted before judging".into()),
        Err(e) => return Err(e),
    };
    ctx.trace.record(
        "judge",
        "judge",
        EventKind::Judge,
        json!({"solved": verdict.is_solved(), "rationale": verdict.rationale()}),
    );
    Ok(verdict)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::FunctionCallRequest;
    use crate::solver::SolverNode;

    fn result(outcome: FinishOutcome) -> SolverResult {
        SolverResult {
            outcome,
            api_calls: vec![],
            path_calls: vec![],
            dialogue: vec![],
            usage: Default::default(),
            nodes: Vec::<SolverNode>::new(),
            visits: vec![],
            offered: BTreeMap::new(),
        }
    }

    #[test]
    fn failure_origins() {
        let give_up = result(FinishOutcome::GiveUp {
            reason: "convert returns 404".into(),
            blamed: vec!["convert".into()],
        });
        let r = extract_failure(&give_up, &Verdict::Unsolved("convert returns 404".into())).unwrap();
        assert_eq!(r.origin, FailureOrigin::SolverGiveUp);
        assert_eq!(r.blamed, ["convert"]);

        let answered = result(FinishOutcome::GiveSolution { answer: "x".into() });
        let r = extract_failure(&answered, &Verdict::Unsolved("R".into())).unwrap();
        assert_eq!((r.origin, r.reason.as_str(), r.blamed.len()), (FailureOrigin::JudgeUnsolved, "R", 0));

        assert!(matches!(
            extract_failure(&answered, &Verdict::Solved("ok".into())),
            Err(Error::Contract(_))
        ));
    }

    fn universe() -> ApiUniverse {
        ApiUniverse::from_json_str(
            r#"{"categories":[{"name":"C","tools":[{"name":"T","apis":[{"name":"a"},{"name":"b"},{"name":"c"}]}]}]}"#,
        )
        .unwrap()
    }

    fn id(a: &str) -> ApiIdentifier {
        ApiIdentifier::new("C", "T", a)
    }

    #[test]
    fn pruning_cuts_exactly_one_pair() {
        let u = universe();
        let mut pool = CandidatePool::new(8);
        pool.add([id("a"), id("b"), id("c")]).unwrap();
        let offered: BTreeMap<String, ApiIdentifier> =
            ["a", "b", "c"].iter().map(|n| (format!("C__T__{n}"), id(n))).collect();
        let call = |n: &str| Message::assistant_call("", FunctionCallRequest::new(format!("C__T__{n}"), json!({})));
        let res = |n: &str| Message::function_result(format!("C__T__{n}"), "r");
        let dialogue = vec![
            Message::system("s"),
            Message::user("q"),
            call("a"),
            res("a"),
            call("b"),
            res("b"),
            call("c"),
            res("c"),
        ];
        let report = FailureReport {
            origin: FailureOrigin::SolverGiveUp,
            reason: "b is broken".into(),
            blamed: vec!["C__T__b".into()],
        };
        let q = Query::new("q", "q");
        let cleaned =
            reflect_solver(&report, &mut pool, dialogue.clone(), &offered, &q, &u, &PromptSet::default()).unwrap();
        assert_eq!(pool.entries(), [id("a"), id("c")]);
        assert_eq!(cleaned.len(), dialogue.len() - 2 + 1);
        assert_eq!(&cleaned[..6], &[&dialogue[..4], &dialogue[6..]].concat()[..]);
        assert!(cleaned.last().unwrap().content.contains("Reason: b is broken"));
        assert!(crate::llm::calls_are_paired(&cleaned));

        let ghost = FailureReport {
            blamed: vec!["zzz".into()],
            ..report
        };
        let again = reflect_solver(&ghost, &mut pool, cleaned.clone(), &offered, &q, &u, &PromptSet::default()).unwrap();
        assert_eq!(pool.entries(), [id("a"), id("c")]);
        assert_eq!(&again[..cleaned.len()], &cleaned[..]);
    }
}
