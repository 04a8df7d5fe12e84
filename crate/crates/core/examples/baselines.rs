//! The two flat baselines: show the catalog in fixed-size groups, or
//! retrieve the best documentation segments by word overlap.

use std::path::PathBuf;

use serde_json::json;

use hiertool::catalog::{ApiIdentifier, ApiUniverse};
use hiertool::eval::{baseline_plain_agent, baseline_rag, partition_groups, GroundTruth, Judge, LexicalOverlap, Query};
use hiertool::llm::{BudgetMeter, Condition, Rule, ScriptedBackend};
use hiertool::prompts::PromptSet;
use hiertool::retriever::functions as f;
use hiertool::retriever::RunContext;
use hiertool::trace::Trace;

fn main() -> hiertool::Result<()> {
    let universe = ApiUniverse::load_path(PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/universe.json"))?;
    let live = ApiIdentifier::new("Sports", "Scores", "live");
    let backend = ScriptedBackend::new(vec![
        Rule::call(Condition::called(f::ADD_APIS), f::FINISH_SEARCH, json!({})),
        Rule::call(Condition::last_message_contains(live.to_string()), f::ADD_APIS, json!({"apis": [live.to_string()]})),
        Rule::call(Condition::always(), f::FINISH_SEARCH, json!({})),
    ])?;
    let judge = Judge::oracle([(
        "score".to_string(),
        GroundTruth { required_apis: vec![live.clone()], answer_fragments: vec![] },
    )]);
    let prompts = PromptSet::default();
    let query = Query::new("score", "What is the live score of the Rovers match?");

    println!("groups of 4 over {} APIs: {:?}", universe.api_count(), partition_groups(universe.api_count(), 4));

    let meter = BudgetMeter::default();
    let trace = Trace::new();
    let ctx = RunContext { universe: &universe, backend: &backend, prompts: &prompts, meter: &meter, trace: &trace, judge: &judge };
    let plain = baseline_plain_agent(&query, ctx, 4, 64)?;
    println!("plain: {:?} after {} groups, pool {:?}", plain.stop, plain.units_processed, plain.pool.entries());

    let meter = BudgetMeter::default();
    let ctx = RunContext { meter: &meter, ..ctx };
    // One pass over the top segments with no solvability check, so a
    // finished pass reports Exhausted even when the pool is right.
    let rag = baseline_rag(&query, ctx, &LexicalOverlap, 40, 2, 64)?;
    println!("rag:   {:?} after {} segments, pool {:?}", rag.stop, rag.units_processed, rag.pool.entries());
    Ok(())
}
