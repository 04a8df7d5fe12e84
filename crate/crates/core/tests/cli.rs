mod common;

use std::path::Path;

use clap::Parser;
use serde_json::Value;

use hiertool::cli::{cmd_bench, cmd_generate_bench, cmd_report, main_with, Cli, GenerateOptions, RunConfig};

fn fx(name: &str) -> String {
    common::fixture(name).display().to_string()
}

fn cli(args: &[&str]) -> Cli {
    let mut all = vec!["hiertool"];
    all.extend_from_slice(args);
    Cli::try_parse_from(all).expect("arguments parse")
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn engine<'a>(scenario: &'a str, out: &'a str) -> Vec<&'a str> {
    vec!["--scenario", scenario, "--deterministic", "--out", out]
}

#[test]
fn run_happy_path_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().display().to_string();
    let (u, s, gt) = (fx("universe.json"), fx("suite.json"), fx("suite_bench.json"));
    let mut args = vec!["run", "--universe", &u, "--ground-truth", &gt, "--query-id", "fx-quote"];
    args.extend(engine(&s, &out));
    assert_eq!(main_with(cli(&args)), 0);
    let doc = read_json(&dir.path().join("result.json"));
    assert_eq!(doc["status"], "solved");
    assert_eq!(doc["rounds"], 0);
    assert!(doc["solution"].as_str().unwrap().contains("92 EUR"));
    let trace = std::fs::read_to_string(dir.path().join("trace.jsonl")).unwrap();
    assert!(hiertool::trace::Trace::parse_jsonl(&trace).unwrap().len() > 5);
    let registry = read_json(&dir.path().join("registry.json"));
    assert_eq!(registry["agents"].as_array().unwrap().len(), 3);
}

#[test]
fn staircase_without_reflection_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().display().to_string();
    let (u, s, gt) = (fx("universe.json"), fx("staircase.json"), fx("staircase_bench.json"));
    let mut args = vec!["run", "--universe", &u, "--ground-truth", &gt, "--query-id", "stairs", "--max-rounds", "0"];
    args.extend(engine(&s, &out));
    assert_eq!(main_with(cli(&args)), 1);
    let doc = read_json(&dir.path().join("result.json"));
    assert_eq!(doc["status"], "unsolved");
    assert_eq!(doc["pool_sizes"], serde_json::json!([1]));
}

#[test]
fn config_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().display().to_string();
    let missing = dir.path().join("nope.json").display().to_string();
    let s = fx("suite.json");
    let mut args = vec!["run", "--universe", &missing, "--query", "x", "--judge", "llm"];
    args.extend(engine(&s, &out));
    assert_eq!(main_with(cli(&args)), 2);

    let u = fx("universe.json");
    let remote = cli(&[
        "run", "--universe", &u, "--query", "x", "--judge", "llm", "--endpoint", "http://127.0.0.1:9", "--model", "m",
        "--deterministic", "--out", &out,
    ]);
    assert_eq!(main_with(remote), 2);

    // the oracle cannot judge a query it has no ground truth for
    let mut args = vec!["run", "--universe", &u, "--query", "x"];
    args.extend(engine(&s, &out));
    assert_eq!(main_with(cli(&args)), 2);
}

#[test]
fn credentials_are_not_accepted_as_flags() {
    let u = fx("universe.json");
    let parsed = Cli::try_parse_from([
        "hiertool", "run", "--universe", &u, "--query", "x", "--endpoint", "http://h", "--model", "m", "--api-key", "k",
    ]);
    assert!(parsed.is_err());
}

fn bench_config(out: &Path) -> RunConfig {
    let s = fx("suite.json");
    let u = fx("universe.json");
    let o = out.display().to_string();
    let parsed = cli(&["bench", "--universe", &u, "--benchmark", "unused", "--scenario", &s, "--deterministic", "--out", &o]);
    match parsed.command {
        hiertool::cli::Command::Bench(args) => RunConfig::from_args(&args.engine).unwrap(),
        _ => unreachable!(),
    }
}

#[test]
fn bench_suite_rates_agree_without_non_solvable_queries() {
    let dir = tempfile::tempdir().unwrap();
    let bench = common::fixture("suite_bench.json");
    let before = std::fs::read(&bench).unwrap();
    let summary = cmd_bench(&bench_config(dir.path()), &bench).unwrap();
    assert_eq!(std::fs::read(&bench).unwrap(), before, "benchmark file was modified");

    let r = &summary.report;
    assert_eq!((r.revised.solved, r.revised.unsolved), (3, 1));
    assert_eq!(r.toolllm.non_solvable, 0);
    assert_eq!(r.rate_eq2, Some(0.75));
    assert_eq!(r.rate_eq1, Some(0.75));
    let statuses: Vec<&str> = summary.docs.iter().map(|d| d.status.as_str()).collect();
    assert_eq!(statuses, ["solved", "solved", "solved", "unsolved"]);

    let csv = std::fs::read_to_string(dir.path().join("report.csv")).unwrap();
    assert!(csv.lines().next().unwrap().starts_with("query_id"));
    assert!(csv.contains("#rate_eq2,0.750000"));
    let stats = std::fs::read_to_string(dir.path().join("stats.txt")).unwrap();
    assert!(stats.starts_with("queries: 4"));

    // the summary over the same directory agrees with the bench report
    let rep = cmd_report(dir.path()).unwrap();
    assert_eq!(rep.report.rate_eq2, Some(0.75));
    assert!(rep.text.contains("pass rate (revised) 0.7500"));
    assert!(rep.skipped.is_empty());
}

#[test]
fn empty_benchmark_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let bench = dir.path().join("empty.json");
    std::fs::write(&bench, r#"{"queries": []}"#).unwrap();
    let err = cmd_bench(&bench_config(dir.path()), &bench).unwrap_err();
    assert!(err.to_string().contains("no queries"), "{err}");
}

#[test]
fn report_means_skips_corrupt_files_and_rejects_empty_dirs() {
    let run_dir = tempfile::tempdir().unwrap();
    cmd_bench(&bench_config(run_dir.path()), &common::fixture("suite_bench.json")).unwrap();
    let results = run_dir.path().join("results");

    let dir = tempfile::tempdir().unwrap();
    for name in ["fx-quote.json", "parts.json"] {
        std::fs::copy(results.join(name), dir.path().join(name)).unwrap();
    }
    std::fs::write(dir.path().join("broken.json"), "{ not json").unwrap();
    let rep = cmd_report(dir.path()).unwrap();
    assert!(rep.text.starts_with("queries: 2\n"));
    assert_eq!(rep.skipped.len(), 1);
    assert!(rep.text.contains("skipped file: broken.json"));
    // one solved, one unsolved
    assert_eq!(rep.report.rate_eq2, Some(0.5));

    let empty = tempfile::tempdir().unwrap();
    assert!(cmd_report(empty.path()).is_err());
    let code = main_with(cli(&["report", &empty.path().display().to_string()]));
    assert_eq!(code, 2);
}

fn generate(scenario: &str, options: GenerateOptions) -> (hiertool::cli::GenerateSummary, tempfile::TempDir) {
    let dir = tempfile::tempdir().unwrap();
    let (u, s, o) = (fx("universe.json"), fx(scenario), dir.path().display().to_string());
    let parsed = cli(&["generate", "--universe", &u, "--scenario", &s, "--deterministic", "--out", &o]);
    let hiertool::cli::Command::Generate(args) = parsed.command else { unreachable!() };
    let config = RunConfig::from_args(&args.engine).unwrap();
    (cmd_generate_bench(&config, &options).unwrap(), dir)
}

#[test]
fn generator_emits_a_verified_instance() {
    let (summary, dir) = generate("gen_valid.json", GenerateOptions { count: 1, max_attempts: 3 });
    assert_eq!(summary.attempts, 1);
    let q = &summary.benchmark.queries[0];
    assert_eq!(q.id, "gen-1");
    // rates was added and then removed again
    let required: Vec<String> = q.ground_truth.required_apis.iter().map(|a| a.to_string()).collect();
    assert_eq!(required, ["Finance/CurrencyX/convert"]);
    assert_eq!(q.reference_answer.as_deref(), Some("100 USD is 92 EUR"));
    let written = hiertool::cli::Benchmark::load_path(dir.path().join("benchmark.json")).unwrap();
    assert_eq!(written, summary.benchmark);
}

#[test]
fn generator_aborts_instances_over_the_meta_call_limit() {
    let (summary, _dir) = generate("gen_overlimit.json", GenerateOptions { count: 1, max_attempts: 3 });
    assert_eq!(summary.attempts, 2);
    assert_eq!(summary.benchmark.queries.len(), 1);
    assert_eq!(summary.discarded.len(), 1);
    assert!(summary.discarded[0].contains("exceeded 20 meta function calls"), "{:?}", summary.discarded);
}

#[test]
fn generator_discards_unverified_solutions() {
    let (summary, dir) = generate("gen_unverified.json", GenerateOptions { count: 1, max_attempts: 2 });
    assert!(summary.benchmark.queries.is_empty());
    assert_eq!(summary.discarded.len(), 2);
    assert!(summary.discarded[0].contains("verification failed"));
    assert!(dir.path().join("benchmark.json").exists());
}
