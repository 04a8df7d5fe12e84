//! Generates one verified benchmark instance from a scripted explorer.

use std::path::PathBuf;

use hiertool::cli::{cmd_generate_bench, BackendChoice, GenerateOptions, JudgeKind, RunConfig};
use hiertool::reflection::LoopConfig;

fn main() -> hiertool::Result<()> {
    let fixtures = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let out = std::env::temp_dir().join("hiertool-generate");
    let config = RunConfig {
        universe: fixtures.join("universe.json"),
        backend: BackendChoice::Scripted(fixtures.join("gen_overlimit.json")),
        judge: JudgeKind::Oracle,
        prompts: None,
        loop_config: LoopConfig::default(),
        budget: 200_000,
        out,
        deterministic: true,
        seed: None,
        temperature: None,
        workers: 1,
    };
    // The first attempt wanders past the meta-call limit and is thrown away.
    let summary = cmd_generate_bench(&config, &GenerateOptions { count: 1, max_attempts: 3 })?;
    println!("attempts: {}", summary.attempts);
    for note in &summary.discarded {
        println!("discarded: {note}");
    }
    for q in &summary.benchmark.queries {
        println!("{}: {}", q.id, q.text);
        println!("  required: {:?}", q.ground_truth.required_apis.iter().map(|a| a.to_string()).collect::<Vec<_>>());
        println!("  reference: {:?}", q.reference_answer);
    }
    println!("written to {}", summary.path.display());
    Ok(())
}
