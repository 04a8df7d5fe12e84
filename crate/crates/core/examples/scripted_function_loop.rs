//! The bare function-calling loop with an in-code scripted model.

use serde_json::json;

use hiertool::llm::{
    run_function_loop, BudgetMeter, Condition, FunctionSchema, LoopOptions, Message, ParamSchema, Rule, ScriptedBackend,
};

fn main() -> hiertool::Result<()> {
    // First ask for the time, then stop once the answer is in the dialogue.
    let backend = ScriptedBackend::new(vec![
        Rule::call(Condition::called("clock"), "done", json!({"summary": "it is noon"})),
        Rule::call(Condition::always(), "clock", json!({"zone": "UTC"})),
    ])?;
    let schemas = vec![
        FunctionSchema::new("clock", "current time in a zone")
            .param(ParamSchema::new("zone", "string", true, "time zone")),
        FunctionSchema::new("done", "report back").param(ParamSchema::new("summary", "string", true, "what you found")),
    ];
    let seed = vec![Message::system("You can call functions."), Message::user("What time is it?")];
    let meter = BudgetMeter::new(10_000);

    let out = run_function_loop(
        &backend,
        seed,
        &schemas,
        |call| match call.name.as_str() {
            "clock" => format!("12:00 {}", call.arg_str("zone").unwrap_or("UTC")),
            "done" => "ok".into(),
            other => format!("function {other} does not exist"),
        },
        |reply, _| reply.call().filter(|c| c.name == "done").map(|c| serde_json::Value::Object(c.arguments.clone()).to_string()),
        &meter,
        LoopOptions::default(),
    )?;

    println!("stop: {}", out.stop);
    println!("iterations: {}, tokens charged: {}", out.iterations, meter.used());
    for m in &out.dialogue {
        println!("  {:?}: {}", m.role, m.match_text());
    }
    Ok(())
}
