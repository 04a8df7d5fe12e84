//! A full benchmark run over the scripted suite, written to a temp dir.

use std::path::PathBuf;

use hiertool::cli::{cmd_bench, cmd_report, BackendChoice, JudgeKind, RunConfig};
use hiertool::reflection::LoopConfig;
use hiertool::retriever::RetrieverConfig;

fn main() -> hiertool::Result<()> {
    let fixtures = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let out = std::env::temp_dir().join("hiertool-bench-suite");
    let config = RunConfig {
        universe: fixtures.join("universe.json"),
        backend: BackendChoice::Scripted(fixtures.join("suite.json")),
        judge: JudgeKind::Oracle,
        prompts: None,
        loop_config: LoopConfig {
            retriever: RetrieverConfig { deterministic: true, ..RetrieverConfig::default() },
            ..LoopConfig::default()
        },
        budget: 200_000,
        out: out.clone(),
        deterministic: true,
        seed: None,
        temperature: None,
        workers: 1,
    };
    let summary = cmd_bench(&config, &fixtures.join("suite_bench.json"))?;
    for doc in &summary.docs {
        println!("{:<9} {:<10} rounds={} pool={:?}", doc.query_id, doc.status, doc.rounds, doc.pool_sizes);
    }
    println!();
    print!("{}", cmd_report(&out)?.text);
    println!("files under {}", out.display());
    Ok(())
}
