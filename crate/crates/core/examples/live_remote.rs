//! One chat turn against a live OpenAI-compatible endpoint.
//!
//! HIERTOOL_LIVE_ENDPOINT=https://host/v1 HIERTOOL_LIVE_MODEL=name \
//! HIERTOOL_API_KEY=... cargo run --example live_remote

use hiertool::llm::{chat, BudgetMeter, FunctionSchema, Message, ParamSchema, RemoteBackend, RemoteConfig};

fn main() -> hiertool::Result<()> {
    let (Ok(endpoint), Ok(model)) = (std::env::var("HIERTOOL_LIVE_ENDPOINT"), std::env::var("HIERTOOL_LIVE_MODEL")) else {
        eprintln!("set HIERTOOL_LIVE_ENDPOINT and HIERTOOL_LIVE_MODEL to run this example");
        return Ok(());
    };
    let mut config = RemoteConfig::new(endpoint, model);
    config.api_key = std::env::var("HIERTOOL_API_KEY").ok();
    config.temperature = Some(0.0);
    let backend = RemoteBackend::new(config)?;

    let schemas = vec![FunctionSchema::new("get_tools_in_category", "List the tools of a category.")
        .param(ParamSchema::new("category_name", "string", true, "category to list"))];
    let dialogue = vec![
        Message::system("You explore an API catalog with the categories Finance, Travel and Sports."),
        Message::user("Which tools does the Finance category have?"),
    ];
    let meter = BudgetMeter::new(20_000);
    let reply = chat(&backend, &dialogue, &schemas, &meter)?;
    match reply.call() {
        Some(call) => println!("call {} {}", call.name, serde_json::Value::Object(call.arguments.clone())),
        None => println!("text: {}", reply.text().unwrap_or_default()),
    }
    println!("tokens: {}", meter.used());
    Ok(())
}
