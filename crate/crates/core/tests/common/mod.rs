#![allow(dead_code)]

use std::path::PathBuf;

use hiertool::catalog::ApiUniverse;
use hiertool::cli::Benchmark;
use hiertool::eval::Judge;
use hiertool::llm::ScriptedBackend;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

pub fn universe() -> ApiUniverse {
    ApiUniverse::load_path(fixture("universe.json")).expect("fixture universe")
}

pub fn backend(name: &str) -> ScriptedBackend {
    ScriptedBackend::load_path(fixture(name)).expect("fixture scenario")
}

pub fn suite() -> Benchmark {
    Benchmark::load_path(fixture("suite_bench.json")).expect("fixture benchmark")
}

pub fn suite_judge() -> Judge {
    Judge::Oracle(suite().truth())
}
