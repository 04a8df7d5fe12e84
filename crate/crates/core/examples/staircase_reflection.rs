//! A query whose APIs only surface one per round. Each reflection round
//! reopens the agents, grows the pool, and retries the solver.

use std::path::PathBuf;

use hiertool::catalog::ApiUniverse;
use hiertool::cli::Benchmark;
use hiertool::eval::{Judge, Query};
use hiertool::llm::{BudgetMeter, ScriptedBackend};
use hiertool::prompts::PromptSet;
use hiertool::reflection::{run_closed_loop, LoopConfig};
use hiertool::retriever::{RetrieverConfig, RunContext};
use hiertool::trace::{EventKind, Trace};

fn main() -> hiertool::Result<()> {
    let fixtures = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let universe = ApiUniverse::load_path(fixtures.join("universe.json"))?;
    let bench = Benchmark::load_path(fixtures.join("staircase_bench.json"))?;
    let judge = Judge::Oracle(bench.truth());
    let prompts = PromptSet::default();
    let q = bench.get("stairs").expect("stairs query");
    let query = Query::new(q.id.clone(), q.text.clone());

    for max_rounds in 0..=3 {
        let backend = ScriptedBackend::load_path(fixtures.join("staircase.json"))?;
        let meter = BudgetMeter::default();
        let trace = Trace::new();
        let ctx = RunContext { universe: &universe, backend: &backend, prompts: &prompts, meter: &meter, trace: &trace, judge: &judge };
        let config = LoopConfig {
            max_rounds,
            retriever: RetrieverConfig { deterministic: true, ..RetrieverConfig::default() },
            ..LoopConfig::default()
        };
        let run = run_closed_loop(&query, ctx, &config)?;
        let resumed: Vec<String> = trace.of(EventKind::Resume).into_iter().map(|e| e.agent_id).collect();
        println!(
            "max_rounds={max_rounds}: {} after round {}, pool sizes {:?}, resumed {resumed:?}",
            run.result.status.as_str(),
            run.result.rounds,
            run.result.pool_sizes,
        );
    }
    Ok(())
}
