//! The three-tier API catalog (category → tool → API) and API execution.
//!
//! A universe is loaded once from a JSON document and is immutable
//! afterwards, so every agent may read it concurrently. Lookups that miss
//! return [`NotFound`] values rather than errors: agents hallucinate names
//! and the miss is reported back to them as an ordinary function result.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io::Read;
use std::path::Path;
use std::time::Duration;

use reqwest::blocking::Client;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::http::{self, RetryPolicy};

/// Serializes as an object; deserializes from an object or from a
/// `category/tool/api` string.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "IdentifierRepr")]
pub struct ApiIdentifier {
    pub category: String,
    pub tool: String,
    pub api: String,
}

impl ApiIdentifier {
    pub fn new(category: impl Into<String>, tool: impl Into<String>, api: impl Into<String>) -> Self {
        Self {
            category: category.into(),
            tool: tool.into(),
            api: api.into(),
        }
    }

    /// Parses `category/tool/api`.
    pub fn parse(path: &str) -> Option<Self> {
        let mut parts = path.splitn(3, '/');
        let (c, t, a) = (parts.next()?, parts.next()?, parts.next()?);
        if c.is_empty() || t.is_empty() || a.is_empty() {
            return None;
        }
        Some(Self::new(c, t, a))
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum IdentifierRepr {
    Path(String),
    Parts {
        category: String,
        tool: String,
        api: String,
    },
}

impl TryFrom<IdentifierRepr> for ApiIdentifier {
    type Error = String;

    fn try_from(repr: IdentifierRepr) -> std::result::Result<Self, String> {
        match repr {
            IdentifierRepr::Path(p) => {
                Self::parse(&p).ok_or_else(|| format!("expected category/tool/api, got {p:?}"))
            }
            IdentifierRepr::Parts { category, tool, api } => Ok(Self::new(category, tool, api)),
        }
    }
}

impl fmt::Display for ApiIdentifier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}", self.category, self.tool, self.api)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    #[serde(rename = "type", default)]
    pub kind: String,
    #[serde(default)]
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ApiSpec {
    pub id: ApiIdentifier,
    pub description: String,
    pub required_params: Vec<ParamSpec>,
    pub optional_params: Vec<ParamSpec>,
    pub response_description: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToolSpec {
    pub name: String,
    pub category: String,
    pub description: String,
    pub apis: Vec<ApiSpec>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Category {
    pub name: String,
    pub tools: Vec<ToolSpec>,
}

/// A lookup miss, reported to the calling agent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct NotFound {
    pub kind: &'static str,
    pub name: String,
}

impl NotFound {
    fn new(kind: &'static str, name: impl Into<String>) -> Self {
        Self {
            kind,
            name: name.into(),
        }
    }
}

impl fmt::Display for NotFound {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} not found: {}", self.kind, self.name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ToolDescription {
    pub name: String,
    /// `None` marks an unknown tool.
    pub description: Option<String>,
}

/// Failure of a single API invocation. Rendered into the dialogue as an
/// error function result; never fatal to a run.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ApiError {
    #[error("{0}")]
    Unknown(NotFound),
    #[error("missing parameter {0}")]
    MissingParameter(String),
    #[error("no scripted response")]
    NoScriptedResponse,
    #[error("{0}")]
    Api(String),
    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
}

type CanonicalArgs = BTreeMap<String, String>;
type ScriptedReply = std::result::Result<String, String>;

#[derive(Debug, Default, Clone)]
struct ScriptedApi {
    exact: HashMap<CanonicalArgs, ScriptedReply>,
    wildcard: Option<ScriptedReply>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct RemoteExecutorConfig {
    pub endpoint: String,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
}

fn default_timeout_ms() -> u64 {
    30_000
}
fn default_retries() -> u32 {
    3
}
fn default_backoff_ms() -> u64 {
    500
}

#[derive(Debug)]
pub enum ApiExecutor {
    Scripted(HashMap<ApiIdentifier, ScriptedApiTable>),
    Remote {
        config: RemoteExecutorConfig,
        client: Client,
    },
}

/// Scripted responses for one API.
#[derive(Debug, Default, Clone)]
pub struct ScriptedApiTable(ScriptedApi);

/// An API, the exact arguments it answers (`None` for any), and the reply.
pub type ScriptedEntry = (ApiIdentifier, Option<Map<String, Value>>, ScriptedReply);

/// Keys sorted, values stringified: strings verbatim, everything else as
/// compact JSON.
pub fn canonicalize_args(args: &Map<String, Value>) -> BTreeMap<String, String> {
    args.iter()
        .map(|(k, v)| {
            let s = match v {
                Value::String(s) => s.clone(),
                other => other.to_string(),
            };
            (k.clone(), s)
        })
        .collect()
}

#[derive(Debug)]
pub struct ApiUniverse {
    categories: Vec<Category>,
    executor: ApiExecutor,
    category_index: HashMap<String, usize>,
    api_index: HashMap<ApiIdentifier, (usize, usize, usize)>,
}

// --- document schema ---

#[derive(Deserialize)]
struct UniverseDoc {
    categories: Vec<CategoryDoc>,
    #[serde(default)]
    scripted_responses: Vec<ScriptedDoc>,
    #[serde(default)]
    remote_executor: Option<RemoteExecutorConfig>,
}

#[derive(Deserialize)]
struct CategoryDoc {
    name: String,
    #[serde(default)]
    tools: Vec<ToolDoc>,
}

#[derive(Deserialize)]
struct ToolDoc {
    name: String,
    #[serde(default)]
    description: String,
    #[serde(default)]
    apis: Vec<ApiDoc>,
}

#[derive(Deserialize)]
struct ApiDoc {
    name: String,
    #[serde(default)]
    description: String,
    #[serde(default)]
    required_params: Vec<ParamSpec>,
    #[serde(default)]
    optional_params: Vec<ParamSpec>,
    #[serde(default)]
    response_description: String,
}

#[derive(Deserialize)]
struct ScriptedDoc {
    category: String,
    tool: String,
    api: String,
    #[serde(default)]
    args: Option<Value>,
    #[serde(default)]
    response: Option<Value>,
    #[serde(default)]
    error: Option<String>,
}

impl ApiUniverse {
    /// Builds and validates a universe. Scripted entries may be attached
    /// afterwards with [`ApiUniverse::with_scripted_responses`].
    pub fn new(categories: Vec<Category>, executor: ApiExecutor) -> Result<Self> {
        if categories.is_empty() {
            return Err(Error::Invalid("universe must contain ≥1 category".into()));
        }
        let mut category_index = HashMap::new();
        let mut api_index = HashMap::new();
        for (ci, category) in categories.iter().enumerate() {
            if category.name.is_empty() {
                return Err(Error::Invalid("empty category name".into()));
            }
            if category_index.insert(category.name.clone(), ci).is_some() {
                return Err(Error::Duplicate {
                    kind: "category",
                    name: category.name.clone(),
                });
            }
            let mut tools = HashSet::new();
            for (ti, tool) in category.tools.iter().enumerate() {
                if tool.name.is_empty() {
                    return Err(Error::Invalid(format!("empty tool name in {}", category.name)));
                }
                if !tools.insert(tool.name.as_str()) {
                    return Err(Error::Duplicate {
                        kind: "tool",
                        name: format!("{}/{}", category.name, tool.name),
                    });
                }
                for (ai, api) in tool.apis.iter().enumerate() {
                    if api.id.api.is_empty() {
                        return Err(Error::Invalid(format!("empty API name in {}", tool.name)));
                    }
                    if api.id.category != category.name || api.id.tool != tool.name {
                        return Err(Error::Invalid(format!(
                            "API {} filed under {}/{}",
                            api.id, category.name, tool.name
                        )));
                    }
                    let mut params = HashSet::new();
                    for p in api.required_params.iter().chain(&api.optional_params) {
                        if !params.insert(p.name.as_str()) {
                            return Err(Error::Duplicate {
                                kind: "parameter",
                                name: format!("{}:{}", api.id, p.name),
                            });
                        }
                    }
                    if api_index.insert(api.id.clone(), (ci, ti, ai)).is_some() {
                        return Err(Error::Duplicate {
                            kind: "API",
                            name: api.id.to_string(),
                        });
                    }
                }
            }
        }
        if api_index.is_empty() {
            return Err(Error::Invalid("universe must contain at least one API".into()));
        }
        Ok(Self {
            categories,
            executor,
            category_index,
            api_index,
        })
    }

    pub fn load(mut source: impl Read) -> Result<Self> {
        let mut text = String::new();
        source
            .read_to_string(&mut text)
            .map_err(|e| Error::Invalid(format!("reading universe: {e}")))?;
        Self::from_json_str(&text)
    }

    pub fn load_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::load(std::io::BufReader::new(file))
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let doc: UniverseDoc = serde_json::from_str(text).map_err(Error::from_json)?;
        let categories = doc
            .categories
            .into_iter()
            .map(|c| {
                let tools = c
                    .tools
                    .into_iter()
                    .map(|t| ToolSpec {
                        apis: t
                            .apis
                            .into_iter()
                            .map(|a| ApiSpec {
                                id: ApiIdentifier::new(&c.name, &t.name, a.name),
                                description: a.description,
                                required_params: a.required_params,
                                optional_params: a.optional_params,
                                response_description: a.response_description,
                            })
                            .collect(),
                        name: t.name,
                        category: c.name.clone(),
                        description: t.description,
                    })
                    .collect();
                Category { name: c.name, tools }
            })
            .collect();

        let executor = match doc.remote_executor {
            Some(_) if !doc.scripted_responses.is_empty() => {
                return Err(Error::Invalid(
                    "scripted_responses and remote_executor are mutually exclusive".into(),
                ));
            }
            Some(config) => ApiExecutor::remote(config)?,
            None => ApiExecutor::Scripted(HashMap::new()),
        };
        let mut universe = Self::new(categories, executor)?;
        let mut entries = Vec::with_capacity(doc.scripted_responses.len());
        for entry in doc.scripted_responses {
            let id = ApiIdentifier::new(entry.category, entry.tool, entry.api);
            let args = match entry.args {
                None => None,
                Some(Value::String(s)) if s == "*" => None,
                Some(Value::Object(map)) => Some(map),
                Some(other) => {
                    return Err(Error::Invalid(format!(
                        "scripted args for {id} must be an object or \"*\", got {other}"
                    )))
                }
            };
            let reply = match (entry.response, entry.error) {
                (Some(_), Some(_)) => {
                    return Err(Error::Invalid(format!(
                        "scripted entry for {id} has both response and error"
                    )))
                }
                (Some(Value::String(s)), None) => Ok(s),
                (Some(v), None) => Ok(v.to_string()),
                (None, Some(e)) => Err(e),
                (None, None) => {
                    return Err(Error::Invalid(format!(
                        "scripted entry for {id} needs response or error"
                    )))
                }
            };
            entries.push((id, args, reply));
        }
        universe.add_scripted(entries)?;
        Ok(universe)
    }

    /// Attaches scripted responses; `None` args register the wildcard.
    pub fn with_scripted_responses(
        mut self,
        entries: impl IntoIterator<Item = ScriptedEntry>,
    ) -> Result<Self> {
        self.add_scripted(entries.into_iter().collect())?;
        Ok(self)
    }

    fn add_scripted(
        &mut self,
        entries: Vec<ScriptedEntry>,
    ) -> Result<()> {
        if entries.is_empty() {
            return Ok(());
        }
        for (id, _, _) in &entries {
            if !self.api_index.contains_key(id) {
                return Err(Error::Invalid(format!("scripted response for unknown API {id}")));
            }
        }
        let ApiExecutor::Scripted(table) = &mut self.executor else {
            return Err(Error::Invalid("scripted responses need a scripted executor".into()));
        };
        for (id, args, reply) in entries {
            let slot = &mut table.entry(id).or_default().0;
            match args {
                Some(args) => {
                    slot.exact.insert(canonicalize_args(&args), reply);
                }
                None => slot.wildcard = Some(reply),
            }
        }
        Ok(())
    }

    pub fn categories(&self) -> &[Category] {
        &self.categories
    }

    pub fn category_names(&self) -> Vec<&str> {
        self.categories.iter().map(|c| c.name.as_str()).collect()
    }

    pub fn category(&self, name: &str) -> Option<&Category> {
        self.category_index.get(name).map(|&i| &self.categories[i])
    }

    /// Every API in catalog order.
    pub fn apis(&self) -> impl Iterator<Item = &ApiSpec> {
        self.categories
            .iter()
            .flat_map(|c| c.tools.iter())
            .flat_map(|t| t.apis.iter())
    }

    pub fn api_count(&self) -> usize {
        self.api_index.len()
    }

    pub fn executor(&self) -> &ApiExecutor {
        &self.executor
    }

    pub fn get_tools_in_category(&self, category: &str) -> std::result::Result<Vec<&str>, NotFound> {
        self.category(category)
            .map(|c| c.tools.iter().map(|t| t.name.as_str()).collect())
            .ok_or_else(|| NotFound::new("category", category))
    }

    /// Finds a tool by name, within `category` when given, otherwise the
    /// first match in catalog order.
    pub fn find_tool(&self, name: &str, category: Option<&str>) -> Option<&ToolSpec> {
        match category {
            Some(c) => self.category(c)?.tools.iter().find(|t| t.name == name),
            None => self
                .categories
                .iter()
                .flat_map(|c| c.tools.iter())
                .find(|t| t.name == name),
        }
    }

    pub fn get_tool_descriptions<S: AsRef<str>>(
        &self,
        tools: &[S],
        category: Option<&str>,
    ) -> Vec<ToolDescription> {
        tools
            .iter()
            .map(|name| {
                let name = name.as_ref();
                ToolDescription {
                    name: name.to_string(),
                    description: self.find_tool(name, category).map(|t| t.description.clone()),
                }
            })
            .collect()
    }

    pub fn get_apis_in_tool(
        &self,
        tool: &str,
        category: Option<&str>,
    ) -> std::result::Result<Vec<&str>, NotFound> {
        self.find_tool(tool, category)
            .map(|t| t.apis.iter().map(|a| a.id.api.as_str()).collect())
            .ok_or_else(|| NotFound::new("tool", tool))
    }

    pub fn api(&self, id: &ApiIdentifier) -> Option<&ApiSpec> {
        self.api_index
            .get(id)
            .map(|&(c, t, a)| &self.categories[c].tools[t].apis[a])
    }

    pub fn tool_of(&self, id: &ApiIdentifier) -> Option<&ToolSpec> {
        self.api_index
            .get(id)
            .map(|&(c, t, _)| &self.categories[c].tools[t])
    }

    pub fn get_api_details(&self, ids: &[ApiIdentifier]) -> Vec<std::result::Result<&ApiSpec, NotFound>> {
        ids.iter()
            .map(|id| self.api(id).ok_or_else(|| NotFound::new("API", id.to_string())))
            .collect()
    }

    pub fn execute_api(
        &self,
        id: &ApiIdentifier,
        args: &Map<String, Value>,
    ) -> std::result::Result<String, ApiError> {
        let spec = self
            .api(id)
            .ok_or_else(|| ApiError::Unknown(NotFound::new("API", id.to_string())))?;
        if let Some(missing) = spec
            .required_params
            .iter()
            .find(|p| !args.contains_key(&p.name))
        {
            return Err(ApiError::MissingParameter(missing.name.clone()));
        }
        self.executor.execute(id, args)
    }
}

impl ApiExecutor {
    pub fn remote(config: RemoteExecutorConfig) -> Result<Self> {
        let client = Client::builder()
            .timeout(Duration::from_millis(config.timeout_ms))
            .build()
            .map_err(|e| Error::Config(format!("building HTTP client: {e}")))?;
        Ok(ApiExecutor::Remote { config, client })
    }

    pub fn is_scripted(&self) -> bool {
        matches!(self, ApiExecutor::Scripted(_))
    }

    fn execute(&self, id: &ApiIdentifier, args: &Map<String, Value>) -> std::result::Result<String, ApiError> {
        match self {
            ApiExecutor::Scripted(table) => {
                let api = table.get(id).ok_or(ApiError::NoScriptedResponse)?;
                let reply = api
                    .0
                    .exact
                    .get(&canonicalize_args(args))
                    .or(api.0.wildcard.as_ref())
                    .ok_or(ApiError::NoScriptedResponse)?;
                reply.clone().map_err(ApiError::Api)
            }
            ApiExecutor::Remote { config, client } => {
                let body = serde_json::json!({
                    "category": id.category,
                    "tool_name": id.tool,
                    "api_name": id.api,
                    "tool_input": args,
                });
                let policy = RetryPolicy {
                    max_retries: config.max_retries,
                    base_delay: Duration::from_millis(config.backoff_ms),
                };
                let reply = http::post_json(client, &config.endpoint, None, &body, &policy).map_err(
                    |f| ApiError::Transport {
                        attempts: f.attempts,
                        message: f.message,
                    },
                )?;
                if (200..300).contains(&reply.status) {
                    Ok(reply.body)
                } else {
                    Err(ApiError::Http {
                        status: reply.status,
                        body: reply.body,
                    })
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    pub(crate) const FIXTURE: &str = r#"{
      "categories": [
        {"name": "Finance", "tools": [
          {"name": "CurrencyX", "description": "currency conversion rates", "apis": [
            {"name": "convert", "description": "convert an amount",
             "required_params": [
               {"name": "from", "type": "string", "description": "source currency"},
               {"name": "to", "type": "string", "description": "target currency"},
               {"name": "amount", "type": "number", "description": "amount"}],
             "response_description": "converted amount"},
            {"name": "list_symbols", "description": "list currency symbols"}]},
          {"name": "StockY", "description": "stock quotes", "apis": [
            {"name": "quote", "description": "latest quote",
             "required_params": [{"name": "symbol", "type": "string", "description": "ticker"}]}]},
          {"name": "EmptyTool", "description": "nothing here", "apis": []}]},
        {"name": "Sports", "tools": []}
      ],
      "scripted_responses": [
        {"category": "Finance", "tool": "CurrencyX", "api": "convert",
         "args": {"from": "USD", "to": "EUR", "amount": 1}, "response": "0.92"},
        {"category": "Finance", "tool": "CurrencyX", "api": "convert", "args": "*", "response": "1.00"},
        {"category": "Finance", "tool": "StockY", "api": "quote", "args": "*", "error": "rate limited"}
      ]
    }"#;

    fn fixture() -> ApiUniverse {
        ApiUniverse::from_json_str(FIXTURE).unwrap()
    }

    fn convert() -> ApiIdentifier {
        ApiIdentifier::new("Finance", "CurrencyX", "convert")
    }

    fn args(v: Value) -> Map<String, Value> {
        v.as_object().unwrap().clone()
    }

    #[test]
    fn load_counts_and_order() {
        let u = fixture();
        assert_eq!(u.api_count(), 3);
        assert_eq!(u.category_names(), vec!["Finance", "Sports"]);
        assert_eq!(
            u.get_tools_in_category("Finance").unwrap(),
            vec!["CurrencyX", "StockY", "EmptyTool"]
        );
    }

    #[test]
    fn load_rejects_empty_category_list() {
        let err = ApiUniverse::from_json_str(r#"{"categories": []}"#).unwrap_err();
        assert!(err.to_string().contains("universe must contain ≥1 category"), "{err}");
    }

    #[test]
    fn load_rejects_duplicate_tool() {
        let doc = r#"{"categories": [{"name": "Misc", "tools": [
            {"name": "Weather", "apis": [{"name": "now"}]},
            {"name": "Weather", "apis": [{"name": "later"}]}]}]}"#;
        match ApiUniverse::from_json_str(doc).unwrap_err() {
            Error::Duplicate { kind, name } => {
                assert_eq!(kind, "tool");
                assert!(name.contains("Weather"));
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn load_reports_parse_position() {
        let err = ApiUniverse::from_json_str("{\n  \"categories\": [,]\n}").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn load_rejects_duplicate_params() {
        let doc = r#"{"categories": [{"name": "M", "tools": [{"name": "T", "apis": [
            {"name": "a", "required_params": [{"name": "x"}], "optional_params": [{"name": "x"}]}]}]}]}"#;
        assert!(matches!(
            ApiUniverse::from_json_str(doc).unwrap_err(),
            Error::Duplicate { kind: "parameter", .. }
        ));
    }

    #[test]
    fn category_lookups() {
        let u = fixture();
        assert_eq!(u.get_tools_in_category("Sports").unwrap(), Vec::<&str>::new());
        let miss = u.get_tools_in_category("Musik").unwrap_err();
        assert_eq!(miss.to_string(), "category not found: Musik");
    }

    #[test]
    fn tool_descriptions_mark_unknown() {
        let u = fixture();
        let d = u.get_tool_descriptions(&["CurrencyX", "Nope"], None);
        assert_eq!(d[0].description.as_deref(), Some("currency conversion rates"));
        assert_eq!(d[1].name, "Nope");
        assert!(d[1].description.is_none());
        assert!(u.get_tool_descriptions::<&str>(&[], None).is_empty());
    }

    #[test]
    fn api_lookups() {
        let u = fixture();
        assert_eq!(
            u.get_apis_in_tool("CurrencyX", None).unwrap(),
            vec!["convert", "list_symbols"]
        );
        assert!(u.get_apis_in_tool("EmptyTool", None).unwrap().is_empty());
        assert_eq!(
            u.get_apis_in_tool("Nope", None).unwrap_err().to_string(),
            "tool not found: Nope"
        );
        let details = u.get_api_details(&[convert(), ApiIdentifier::new("Finance", "CurrencyX", "zz")]);
        let spec = details[0].as_ref().unwrap();
        let names: Vec<_> = spec.required_params.iter().map(|p| p.name.as_str()).collect();
        assert_eq!(names, ["from", "to", "amount"]);
        assert!(details[1].is_err());
        assert!(u.get_api_details(&[]).is_empty());
    }

    #[test]
    fn execute_scripted() {
        let u = fixture();
        let exact = u
            .execute_api(&convert(), &args(json!({"amount": 1, "to": "EUR", "from": "USD"})))
            .unwrap();
        assert_eq!(exact, "0.92");
        let wildcard = u
            .execute_api(&convert(), &args(json!({"from": "USD", "to": "JPY", "amount": 3})))
            .unwrap();
        assert_eq!(wildcard, "1.00");
        assert_eq!(
            u.execute_api(&convert(), &args(json!({"from": "USD"}))).unwrap_err(),
            ApiError::MissingParameter("to".into())
        );
        let list = ApiIdentifier::new("Finance", "CurrencyX", "list_symbols");
        assert_eq!(
            u.execute_api(&list, &Map::new()).unwrap_err().to_string(),
            "no scripted response"
        );
        let quote = ApiIdentifier::new("Finance", "StockY", "quote");
        assert_eq!(
            u.execute_api(&quote, &args(json!({"symbol": "X"}))).unwrap_err(),
            ApiError::Api("rate limited".into())
        );
    }

    #[test]
    fn canonical_args_stringify() {
        let c = canonicalize_args(&args(json!({"b": 1, "a": "x", "c": [1, 2]})));
        let pairs: Vec<_> = c.iter().map(|(k, v)| format!("{k}={v}")).collect();
        assert_eq!(pairs, ["a=x", "b=1", "c=[1,2]"]);
    }

    #[test]
    fn identifier_parse() {
        assert_eq!(ApiIdentifier::parse("Finance/CurrencyX/convert"), Some(convert()));
        assert_eq!(ApiIdentifier::parse("Finance/CurrencyX"), None);
        assert_eq!(ApiIdentifier::parse("a//b"), None);
    }

    #[test]
    fn identifier_deserializes_from_both_forms() {
        let from_path: ApiIdentifier = serde_json::from_value(json!("Finance/CurrencyX/convert")).unwrap();
        let from_obj: ApiIdentifier = serde_json::from_value(
            json!({"category": "Finance", "tool": "CurrencyX", "api": "convert"}),
        )
        .unwrap();
        assert_eq!(from_path, convert());
        assert_eq!(from_obj, convert());
        assert!(serde_json::from_value::<ApiIdentifier>(json!("nope")).is_err());
        let back: ApiIdentifier = serde_json::from_value(serde_json::to_value(convert()).unwrap()).unwrap();
        assert_eq!(back, convert());
    }

    #[test]
    fn traversal_round_trips_through_details() {
        let u = fixture();
        for category in u.categories() {
            for tool in &category.tools {
                for api in &tool.apis {
                    assert_eq!(u.get_api_details(std::slice::from_ref(&api.id)).remove(0).unwrap(), api);
                }
            }
        }
    }
}
