//! The two pass-rate protocols and the per-suite report.
//!
//! Under the `toolllm` protocol a query whose candidate set is judged
//! non-solvable counts as passed without looking at the solution. The
//! `revised` protocol judges every solution directly.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `(non_solvable + solved) / (non_solvable + solved + unsolved)`.
pub fn pass_rate_toolllm(n_nonsolvable: u64, n_solved: u64, n_unsolved: u64) -> Result<f64> {
    let passed = n_nonsolvable + n_solved;
    let total = passed + n_unsolved;
    if total == 0 {
        return Err(Error::UndefinedRate);
    }
    Ok(passed as f64 / total as f64)
}

/// `solved / (solved + unsolved)`.
pub fn pass_rate_revised(n_solved: u64, n_unsolved: u64) -> Result<f64> {
    let total = n_solved + n_unsolved;
    if total == 0 {
        return Err(Error::UndefinedRate);
    }
    Ok(n_solved as f64 / total as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub query_id: String,
    /// Solvability of the final candidate pool.
    pub solvable: bool,
    pub solved: bool,
    pub status: String,
    pub rationale: String,
}

/// Counts as partitioned by the `toolllm` protocol: solved and unsolved
/// only cover queries whose pool was judged solvable.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolLlmCounts {
    pub non_solvable: u64,
    pub solved: u64,
    pub unsolved: u64,
}

/// Counts under the revised protocol, over every query.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RevisedCounts {
    pub solved: u64,
    pub unsolved: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassRateReport {
    pub toolllm: ToolLlmCounts,
    pub revised: RevisedCounts,
    /// `None` when the denominator is zero.
    pub rate_eq1: Option<f64>,
    pub rate_eq2: Option<f64>,
    pub rows: Vec<ReportRow>,
}

impl PassRateReport {
    pub fn from_rows(rows: Vec<ReportRow>) -> Self {
        let mut toolllm = ToolLlmCounts::default();
        let mut revised = RevisedCounts::default();
        for row in &rows {
            match (row.solvable, row.solved) {
                (false, _) => toolllm.non_solvable += 1,
                (true, true) => toolllm.solved += 1,
                (true, false) => toolllm.unsolved += 1,
            }
            if row.solved {
                revised.solved += 1;
            } else {
                revised.unsolved += 1;
            }
        }
        Self {
            rate_eq1: pass_rate_toolllm(toolllm.non_solvable, toolllm.solved, toolllm.unsolved).ok(),
            rate_eq2: pass_rate_revised(revised.solved, revised.unsolved).ok(),
            toolllm,
            revised,
            rows,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// One line per query followed by the two summary rows.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| Error::Invalid(format!("csv: {e}"));
        w.write_record(["query_id", "solvable", "solved", "status", "rationale"])
            .map_err(csv_err)?;
        for r in &self.rows {
            w.write_record([
                r.query_id.as_str(),
                if r.solvable { "true" } else { "false" },
                if r.solved { "true" } else { "false" },
                r.status.as_str(),
                r.rationale.as_str(),
            ])
            .map_err(csv_err)?;
        }
        let fmt = |r: Option<f64>| r.map(|v| format!("{v:.6}")).unwrap_or_else(|| "undefined".into());
        w.write_record(["#rate_eq1", &fmt(self.rate_eq1), "", "", ""]).map_err(csv_err)?;
        w.write_record(["#rate_eq2", &fmt(self.rate_eq2), "", "", ""]).map_err(csv_err)?;
        let bytes = w.into_inner().map_err(|e| Error::Invalid(format!("csv: {e}")))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn write(&self, json_path: impl AsRef<Path>, csv_path: impl AsRef<Path>) -> Result<()> {
        let (j, c) = (json_path.as_ref(), csv_path.as_ref());
        std::fs::write(j, self.to_json()).map_err(|e| Error::io(j, e))?;
        std::fs::write(c, self.to_csv()?).map_err(|e| Error::io(c, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn fixed_points() {
        assert_eq!(pass_rate_toolllm(10, 5, 5).unwrap(), 0.75);
        assert_eq!(pass_rate_toolllm(99, 0, 1).unwrap(), 0.99);
        assert!(matches!(pass_rate_toolllm(0, 0, 0), Err(Error::UndefinedRate)));
        assert_eq!(pass_rate_revised(5, 5).unwrap(), 0.5);
        assert_eq!(pass_rate_revised(0, 1).unwrap(), 0.0);
        assert_eq!(pass_rate_revised(7, 0).unwrap(), 1.0);
        assert!(matches!(pass_rate_revised(0, 0), Err(Error::UndefinedRate)));
    }

    fn row(id: &str, solvable: bool, solved: bool) -> ReportRow {
        ReportRow {
            query_id: id.into(),
            solvable,
            solved,
            status: if solved { "solved" } else { "unsolved" }.into(),
            rationale: String::new(),
        }
    }

    #[test]
    fn report_splits_counts_per_protocol() {
        let r = PassRateReport::from_rows(vec![row("a", false, false), row("b", true, true), row("c", true, false)]);
        assert_eq!(
            r.toolllm,
            ToolLlmCounts {
                non_solvable: 1,
                solved: 1,
                unsolved: 1
            }
        );
        assert_eq!(r.revised, RevisedCounts { solved: 1, unsolved: 2 });
        assert!((r.rate_eq1.unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert!((r.rate_eq2.unwrap() - 1.0 / 3.0).abs() < 1e-12);
        let csv = r.to_csv().unwrap();
        assert!(csv.starts_with("query_id,solvable,solved,status,rationale\na,false,false,unsolved,\n"));
        assert!(csv.contains("#rate_eq2,0.333333"));
    }

    #[test]
    fn empty_report_has_undefined_rates() {
        let r = PassRateReport::from_rows(vec![]);
        assert_eq!((r.rate_eq1, r.rate_eq2), (None, None));
        assert!(r.to_csv().unwrap().contains("#rate_eq1,undefined"));
    }

    proptest! {
        #[test]
        fn rates_are_fractions(ns in 0u64..1000, s in 0u64..1000, u in 0u64..1000) {
            prop_assume!(ns + s + u > 0);
            let r1 = pass_rate_toolllm(ns, s, u).unwrap();
            prop_assert!((0.0..=1.0).contains(&r1));
            if s + u > 0 {
                let r2 = pass_rate_revised(s, u).unwrap();
                prop_assert!((0.0..=1.0).contains(&r2));
                prop_assert!(r1 >= r2);
                if ns == 0 {
                    prop_assert_eq!(r1, r2);
                }
                if ns > 0 && u > 0 {
                    prop_assert!(r1 > r2);
                }
            }
        }
    }
}
