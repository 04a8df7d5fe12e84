//! Meta, category and tool agents filling the candidate pool for one query.

use std::path::PathBuf;

use hiertool::catalog::ApiUniverse;
use hiertool::cli::Benchmark;
use hiertool::eval::{Judge, Query};
use hiertool::llm::{BudgetMeter, ScriptedBackend};
use hiertool::prompts::PromptSet;
use hiertool::retriever::{run_retrieval, RetrieverConfig, RunContext};
use hiertool::trace::{EventKind, Trace};

fn main() -> hiertool::Result<()> {
    let fixtures = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let universe = ApiUniverse::load_path(fixtures.join("universe.json"))?;
    let backend = ScriptedBackend::load_path(fixtures.join("suite.json"))?;
    let bench = Benchmark::load_path(fixtures.join("suite_bench.json"))?;
    let judge = Judge::Oracle(bench.truth());
    let q = bench.get("trip").expect("trip query");

    let prompts = PromptSet::default();
    let meter = BudgetMeter::default();
    let trace = Trace::new();
    let ctx = RunContext { universe: &universe, backend: &backend, prompts: &prompts, meter: &meter, trace: &trace, judge: &judge };
    let config = RetrieverConfig { deterministic: true, ..RetrieverConfig::default() };

    let out = run_retrieval(&Query::new(q.id.clone(), q.text.clone()), ctx, &config, None)?;
    println!("stop: {:?}", out.stop);
    println!("pool ({}):", out.state.pool.len());
    for api in out.state.pool.entries() {
        println!("  {api}");
    }
    println!("agents:");
    for agent in out.state.registry.agents() {
        println!("  {:<8} {:?} {:?}", agent.id, agent.kind, agent.status);
    }
    println!("{} events, {} created, {} tokens", trace.len(), trace.of(EventKind::Created).len(), meter.used());
    Ok(())
}
