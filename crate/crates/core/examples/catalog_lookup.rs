//! Walks the fixture catalog top-down and executes one scripted API.

use std::path::PathBuf;

use hiertool::catalog::{ApiIdentifier, ApiUniverse};

fn main() -> hiertool::Result<()> {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/universe.json");
    let universe = ApiUniverse::load_path(path)?;
    println!("{} APIs in {} categories", universe.api_count(), universe.categories().len());

    for category in universe.category_names() {
        let tools = universe.get_tools_in_category(category).expect("listed category");
        println!("{category}: {}", tools.join(", "));
    }

    let apis = universe.get_apis_in_tool("CurrencyX", Some("Finance")).expect("known tool");
    println!("CurrencyX exposes {apis:?}");

    let convert = ApiIdentifier::new("Finance", "CurrencyX", "convert");
    for detail in universe.get_api_details(std::slice::from_ref(&convert)) {
        match detail {
            Ok(spec) => println!("{}: {} (required {:?})", spec.id, spec.description, spec.required_params.iter().map(|p| &p.name).collect::<Vec<_>>()),
            Err(e) => println!("lookup failed: {e}"),
        }
    }

    let args = serde_json::json!({"amount": 100, "from": "USD", "to": "EUR"});
    let response = universe.execute_api(&convert, args.as_object().unwrap());
    println!("convert -> {response:?}");

    // Missing required parameters come back as an error, not a panic.
    let response = universe.execute_api(&convert, &serde_json::Map::new());
    println!("convert {{}} -> {response:?}");
    Ok(())
}
