//! Judges, pass-rate protocols, baselines and consumption statistics.

mod baselines;
mod judge;
mod pass_rate;
mod stats;

pub use baselines::{
    baseline_plain_agent, baseline_rag, catalog_lines, partition_groups, segment_lines,
    BaselineOutcome, BaselineStop, Embedder, LexicalOverlap, DEFAULT_GROUP_SIZE,
    DEFAULT_SEGMENT_TOKENS,
};
pub use judge::{oracle_verdict, GroundTruth, Judge, Query, Solvability, Verdict};
pub use pass_rate::{
    pass_rate_revised, pass_rate_toolllm, PassRateReport, ReportRow, RevisedCounts, ToolLlmCounts,
};
pub use stats::{collect_stats, QueryStats, ReflectionCounts, RunStats, StatsAggregate, StatsMeans};
