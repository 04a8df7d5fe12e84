//! Per-query consumption statistics and their arithmetic means.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use tracing::warn;

use crate::retriever::TierCounts;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReflectionCounts {
    /// Agent resumes per tier.
    pub meta: u64,
    pub category: u64,
    pub tool: u64,
    /// Solver reflections (prune + re-prompt).
    pub solver: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunStats {
    pub tokens: u64,
    pub model_calls: u64,
    /// Reflection rounds performed after the first attempt.
    pub reflection_rounds: u64,
    pub reflections: ReflectionCounts,
    /// Candidate-pool size at the end of the run.
    pub candidates: u64,
    pub agents: TierCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryStats {
    pub query_id: String,
    pub stats: RunStats,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StatsMeans {
    pub tokens: f64,
    pub model_calls: f64,
    pub reflection_rounds: f64,
    pub reflections_meta: f64,
    pub reflections_category: f64,
    pub reflections_tool: f64,
    pub reflections_solver: f64,
    pub candidates: f64,
    pub agents_meta: f64,
    pub agents_category: f64,
    pub agents_tool: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StatsAggregate {
    pub per_query: Vec<QueryStats>,
    /// `None` when no row was usable.
    pub means: Option<StatsMeans>,
    /// One note per row left out of the means.
    pub excluded: Vec<String>,
}

impl StatsAggregate {
    pub fn from_stats(per_query: Vec<QueryStats>) -> Self {
        let means = mean_of(&per_query);
        Self {
            per_query,
            means,
            excluded: Vec::new(),
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("queries: {}\n", self.per_query.len());
        match &self.means {
            None => out.push_str("no usable rows\n"),
            Some(m) => {
                for (label, v) in [
                    ("avg tokens", m.tokens),
                    ("avg model calls", m.model_calls),
                    ("avg reflection rounds", m.reflection_rounds),
                    ("avg tool-agent resumes", m.reflections_tool),
                    ("avg category-agent resumes", m.reflections_category),
                    ("avg meta-agent resumes", m.reflections_meta),
                    ("avg solver reflections", m.reflections_solver),
                    ("avg candidates", m.candidates),
                    ("avg meta agents", m.agents_meta),
                    ("avg category agents", m.agents_category),
                    ("avg tool agents", m.agents_tool),
                ] {
                    out.push_str(&format!("{label:<28} {v:.2}\n"));
                }
            }
        }
        for note in &self.excluded {
            out.push_str(&format!("skipped: {note}\n"));
        }
        out
    }
}

fn mean_of(rows: &[QueryStats]) -> Option<StatsMeans> {
    if rows.is_empty() {
        return None;
    }
    let n = rows.len() as f64;
    let avg = |f: &dyn Fn(&RunStats) -> u64| rows.iter().map(|r| f(&r.stats) as f64).sum::<f64>() / n;
    Some(StatsMeans {
        tokens: avg(&|s| s.tokens),
        model_calls: avg(&|s| s.model_calls),
        reflection_rounds: avg(&|s| s.reflection_rounds),
        reflections_meta: avg(&|s| s.reflections.meta),
        reflections_category: avg(&|s| s.reflections.category),
        reflections_tool: avg(&|s| s.reflections.tool),
        reflections_solver: avg(&|s| s.reflections.solver),
        candidates: avg(&|s| s.candidates),
        agents_meta: avg(&|s| s.agents.meta),
        agents_category: avg(&|s| s.agents.category),
        agents_tool: avg(&|s| s.agents.tool),
    })
}

/// Aggregates result documents (`{query_id, stats, ...}`). Rows with a
/// missing or malformed field are reported and left out of the means.
pub fn collect_stats(rows: &[Value]) -> StatsAggregate {
    let mut per_query = Vec::new();
    let mut excluded = Vec::new();
    for (i, row) in rows.iter().enumerate() {
        let id = row.get("query_id").and_then(Value::as_str);
        let stats = row
            .get("stats")
            .map(|s| serde_json::from_value::<RunStats>(s.clone()));
        match (id, stats) {
            (Some(id), Some(Ok(stats))) => per_query.push(QueryStats {
                query_id: id.to_string(),
                stats,
            }),
            (id, stats) => {
                let why = match (id, stats) {
                    (None, _) => "missing query_id".to_string(),
                    (_, None) => "missing stats".to_string(),
                    (_, Some(Err(e))) => format!("bad stats: {e}"),
                    _ => unreachable!(),
                };
                let label = id.map(str::to_string).unwrap_or_else(|| format!("row {i}"));
                warn!(row = %label, %why, "excluding row from statistics");
                excluded.push(format!("{label}: {why}"));
            }
        }
    }
    let means = mean_of(&per_query);
    StatsAggregate {
        per_query,
        means,
        excluded,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn row(id: &str, tokens: u64) -> Value {
        json!({"query_id": id, "stats": RunStats { tokens, ..Default::default() }})
    }

    #[test]
    fn means_over_rows() {
        let agg = collect_stats(&[row("a", 100), row("b", 300)]);
        assert_eq!(agg.means.unwrap().tokens, 200.0);
        assert_eq!(agg.per_query.len(), 2);
    }

    #[test]
    fn incomplete_rows_are_excluded() {
        let mut broken = row("c", 5);
        broken["stats"].as_object_mut().unwrap().remove("model_calls");
        let agg = collect_stats(&[row("a", 100), broken, json!({"stats": {}})]);
        assert_eq!(agg.per_query.len(), 1);
        assert_eq!(agg.excluded.len(), 2);
        assert!(agg.excluded[0].starts_with("c: bad stats"));
        assert_eq!(agg.means.unwrap().tokens, 100.0);
    }

    #[test]
    fn empty_set_has_no_means() {
        let agg = collect_stats(&[]);
        assert!(agg.means.is_none());
        assert!(agg.to_text().contains("no usable rows"));
    }
}
