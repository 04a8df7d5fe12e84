//! How the two pass-rate protocols score the same set of outcomes.

use hiertool::eval::{pass_rate_revised, pass_rate_toolllm, PassRateReport, ReportRow};

fn row(id: &str, solvable: bool, solved: bool) -> ReportRow {
    ReportRow {
        query_id: id.into(),
        solvable,
        solved,
        status: if solved { "solved" } else { "unsolved" }.into(),
        rationale: String::new(),
    }
}

fn main() -> hiertool::Result<()> {
    // A retriever that finds nothing useful for half the queries.
    let rows = vec![
        row("a", true, true),
        row("b", true, false),
        row("c", false, false),
        row("d", false, false),
    ];
    let report = PassRateReport::from_rows(rows);
    println!("toolllm counts: {:?}", report.toolllm);
    println!("revised counts: {:?}", report.revised);
    println!("toolllm rate: {:?}", report.rate_eq1);
    println!("revised rate: {:?}", report.rate_eq2);
    print!("{}", report.to_csv()?);

    // Counting non-solvable pools as passes rewards an empty retriever.
    println!("all non-solvable: toolllm {:?}", pass_rate_toolllm(10, 0, 0)?);
    println!("all unsolved:     revised {:?}", pass_rate_revised(0, 10)?);
    Ok(())
}
