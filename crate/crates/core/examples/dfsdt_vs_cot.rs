//! Same pool, same scripted model: the tree search backtracks out of a
//! broken API while the linear chain gives up.

use std::path::PathBuf;

use hiertool::catalog::{ApiIdentifier, ApiUniverse};
use hiertool::eval::Query;
use hiertool::llm::{BudgetMeter, ScriptedBackend};
use hiertool::prompts::PromptSet;
use hiertool::retriever::CandidatePool;
use hiertool::solver::{solve, SolverConfig, SolverStrategy};
use hiertool::trace::Trace;

fn main() -> hiertool::Result<()> {
    let fixtures = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let universe = ApiUniverse::load_path(fixtures.join("universe.json"))?;
    let backend = ScriptedBackend::load_path(fixtures.join("trap.json"))?;
    let mut pool = CandidatePool::new(64);
    pool.add([
        ApiIdentifier::new("Utility", "Broken", "flaky"),
        ApiIdentifier::new("Utility", "Steps", "step1"),
    ])
    .expect("open pool");
    let query = Query::new("trap", "Look up the first part");

    for strategy in [SolverStrategy::Dfsdt, SolverStrategy::Cot] {
        let config = SolverConfig { strategy, ..SolverConfig::default() };
        let r = solve(&query, &pool, &universe, &backend, &PromptSet::default(), &config, &BudgetMeter::default(), &Trace::new(), None)?;
        println!("{strategy:?}");
        println!("  outcome: {:?}", r.outcome);
        println!("  visits:  {:?}", r.visits);
        println!("  api calls: {}, dead nodes: {}", r.api_calls.len(), r.dead_nodes());
    }
    Ok(())
}
