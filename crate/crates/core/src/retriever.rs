//! Three-tier hierarchical retrieval.
//!
//! A meta agent sees the category list and spawns one category agent per
//! relevant category. Category agents split their tools into groups of at
//! most `K` and spawn a tool agent per group. Tool agents inspect APIs and
//! add the relevant ones to a shared [`CandidatePool`]. Each agent keeps
//! its own dialogue.
//!
//! A run stops as soon as a tool agent's solvability check returns true,
//! the pool reaches its cap, the token budget runs out, or no agent has
//! anything left to do. Agents that reply with plain text or trip the
//! iteration guard are parked: still active, but not scheduled again until
//! reflection resumes them.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Condvar, Mutex};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tracing::{debug, warn};

use crate::catalog::{ApiIdentifier, ApiUniverse};
use crate::error::{Error, Result};
use crate::eval::{Judge, Query};
use crate::llm::{
    apply_reply, chat, BudgetMeter, ChatBackend, FunctionCallRequest, FunctionSchema, Message,
    ParamSchema, DEFAULT_MAX_ITERATIONS,
};
use crate::prompts::{PromptId, PromptSet};
use crate::trace::{EventKind, Trace};

pub const DEFAULT_MAX_TOOLS: usize = 5;
pub const DEFAULT_POOL_CAP: usize = 64;

pub mod functions {
    pub const CREATE_CATEGORY_AGENT: &str = "create_agent_category_level";
    pub const CREATE_TOOL_AGENT: &str = "create_agent_tool_level";
    pub const GET_TOOLS_IN_CATEGORY: &str = "get_tools_in_category";
    pub const GET_TOOL_DESCRIPTIONS: &str = "get_tool_descriptions";
    pub const ADD_APIS: &str = "add_apis_into_api_pool";
    pub const REMOVE_APIS: &str = "remove_apis_from_api_pool";
    pub const GET_APIS_IN_TOOL: &str = "get_apis_in_tool";
    pub const GET_API_DETAILS: &str = "get_api_details";
    pub const CHECK_SOLVABLE: &str = "check_if_request_solvable";
    pub const FINISH_SEARCH: &str = "finish_search";
}

use functions as f;

/// Shared handles for one query run.
#[derive(Clone, Copy)]
pub struct RunContext<'a> {
    pub universe: &'a ApiUniverse,
    pub backend: &'a dyn ChatBackend,
    pub prompts: &'a PromptSet,
    pub meter: &'a BudgetMeter,
    pub trace: &'a Trace,
    pub judge: &'a Judge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolvabilityPolicy {
    /// Ask the configured judge.
    Judge,
    /// Always answer false; retrieval then ends on cap, budget or idleness.
    Never,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RetrieverConfig {
    /// Maximum tools per tool agent (`K`).
    pub max_tools: usize,
    pub pool_cap: usize,
    pub solvability: SolvabilityPolicy,
    /// Round-robin on the calling thread instead of a worker pool.
    pub deterministic: bool,
    pub workers: usize,
    /// Model turns per activation before an agent is parked.
    pub max_iterations: usize,
}

impl Default for RetrieverConfig {
    fn default() -> Self {
        Self {
            max_tools: DEFAULT_MAX_TOOLS,
            pool_cap: DEFAULT_POOL_CAP,
            solvability: SolvabilityPolicy::Judge,
            deterministic: false,
            workers: 4,
            max_iterations: DEFAULT_MAX_ITERATIONS,
        }
    }
}

impl RetrieverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_tools == 0 {
            return Err(Error::Config("max tools per agent must be at least 1".into()));
        }
        if self.pool_cap == 0 {
            return Err(Error::Config("pool cap must be at least 1".into()));
        }
        if self.workers == 0 {
            return Err(Error::Config("worker count must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    Meta,
    Category,
    Tool,
}

impl Tier {
    pub fn as_str(self) -> &'static str {
        match self {
            Tier::Meta => "meta",
            Tier::Category => "category",
            Tier::Tool => "tool",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "tier")]
pub enum AgentKind {
    Meta,
    Category { name: String },
    Tool { category: String, tools: Vec<String> },
}

impl AgentKind {
    pub fn tier(&self) -> Tier {
        match self {
            AgentKind::Meta => Tier::Meta,
            AgentKind::Category { .. } => Tier::Category,
            AgentKind::Tool { .. } => Tier::Tool,
        }
    }

    pub fn category(&self) -> Option<&str> {
        match self {
            AgentKind::Meta => None,
            AgentKind::Category { name } => Some(name),
            AgentKind::Tool { category, .. } => Some(category),
        }
    }

    pub fn scope_json(&self) -> Value {
        match self {
            AgentKind::Meta => json!(null),
            AgentKind::Category { name } => json!(name),
            AgentKind::Tool { category, tools } => json!({"category": category, "tools": tools}),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentStatus {
    Active,
    Finished,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentRuntime {
    pub id: String,
    pub kind: AgentKind,
    pub dialogue: Vec<Message>,
    pub status: AgentStatus,
    pub parent: Option<String>,
    /// Active but waiting to be resumed.
    #[serde(default)]
    pub parked: bool,
    /// Model turns in the current activation.
    #[serde(default)]
    pub turns: usize,
}

impl AgentRuntime {
    pub fn tier(&self) -> Tier {
        self.kind.tier()
    }

    pub fn is_finished(&self) -> bool {
        self.status == AgentStatus::Finished
    }

    /// Schedulable right now.
    pub fn is_ready(&self) -> bool {
        !self.is_finished() && !self.parked
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TierCounts {
    pub meta: u64,
    pub category: u64,
    pub tool: u64,
}

impl TierCounts {
    pub fn bump(&mut self, tier: Tier) {
        match tier {
            Tier::Meta => self.meta += 1,
            Tier::Category => self.category += 1,
            Tier::Tool => self.tool += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.meta + self.category + self.tool
    }
}

/// Every agent of one query run, in creation order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AgentRegistry {
    agents: Vec<AgentRuntime>,
}

impl AgentRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn agents(&self) -> &[AgentRuntime] {
        &self.agents
    }

    pub fn agents_mut(&mut self) -> &mut [AgentRuntime] {
        &mut self.agents
    }

    pub fn len(&self) -> usize {
        self.agents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.agents.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&AgentRuntime> {
        self.agents.iter().find(|a| a.id == id)
    }

    pub fn get_mut(&mut self, id: &str) -> Option<&mut AgentRuntime> {
        self.agents.iter_mut().find(|a| a.id == id)
    }

    pub fn meta(&self) -> Option<&AgentRuntime> {
        self.agents.iter().find(|a| a.kind == AgentKind::Meta)
    }

    pub fn of_tier(&self, tier: Tier) -> impl Iterator<Item = &AgentRuntime> {
        self.agents.iter().filter(move |a| a.tier() == tier)
    }

    pub fn counts(&self) -> TierCounts {
        let mut c = TierCounts::default();
        for a in &self.agents {
            c.bump(a.tier());
        }
        c
    }

    pub fn all_finished(&self) -> bool {
        self.agents.iter().all(AgentRuntime::is_finished)
    }

    /// Inserts an agent; ids and `(kind, parent)` pairs must be unique.
    pub fn insert(&mut self, agent: AgentRuntime) -> Result<()> {
        if self.get(&agent.id).is_some() {
            return Err(Error::Duplicate {
                kind: "agent",
                name: agent.id,
            });
        }
        if self
            .agents
            .iter()
            .any(|a| a.kind == agent.kind && a.parent == agent.parent)
        {
            return Err(Error::Duplicate {
                kind: "agent scope",
                name: agent.id,
            });
        }
        self.agents.push(agent);
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(Error::from_json)
    }
}

fn next_id<'k>(kinds: impl Iterator<Item = &'k AgentKind>, tier: Tier) -> String {
    let n = kinds.filter(|k| k.tier() == tier).count() + 1;
    match tier {
        Tier::Meta => "meta".to_string(),
        Tier::Category => format!("cat-{n}"),
        Tier::Tool => format!("tool-{n}"),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rejection {
    Duplicate,
    PoolFull,
    /// Removed by solver reflection earlier in this run.
    Pruned,
    NotFound,
    OutOfScope,
    Unparseable,
}

impl fmt::Display for Rejection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Rejection::Duplicate => "duplicate",
            Rejection::PoolFull => "pool full",
            Rejection::Pruned => "pruned earlier in this run",
            Rejection::NotFound => "not found",
            Rejection::OutOfScope => "outside this agent's tools",
            Rejection::Unparseable => "unparseable API reference",
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AddOutcome {
    pub accepted: Vec<ApiIdentifier>,
    pub rejected: Vec<(String, Rejection)>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("retrieval already terminated")]
pub struct PoolClosed;

/// Ordered, deduplicated, capped set of selected APIs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidatePool {
    entries: Vec<ApiIdentifier>,
    cap: usize,
    closed: bool,
    #[serde(default)]
    pruned: BTreeSet<ApiIdentifier>,
}

impl CandidatePool {
    pub fn new(cap: usize) -> Self {
        assert!(cap >= 1, "pool cap must be positive");
        Self {
            entries: Vec::new(),
            cap,
            closed: false,
            pruned: BTreeSet::new(),
        }
    }

    pub fn entries(&self) -> &[ApiIdentifier] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn cap(&self) -> usize {
        self.cap
    }

    pub fn is_full(&self) -> bool {
        self.entries.len() >= self.cap
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    pub fn close(&mut self) {
        self.closed = true;
    }

    pub fn reopen(&mut self) {
        self.closed = false;
    }

    pub fn contains(&self, id: &ApiIdentifier) -> bool {
        self.entries.contains(id)
    }

    pub fn pruned(&self) -> &BTreeSet<ApiIdentifier> {
        &self.pruned
    }

    /// Appends each fresh id until the cap is reached.
    pub fn add(
        &mut self,
        ids: impl IntoIterator<Item = ApiIdentifier>,
    ) -> std::result::Result<AddOutcome, PoolClosed> {
        if self.closed {
            return Err(PoolClosed);
        }
        let mut out = AddOutcome::default();
        for id in ids {
            let reason = if self.pruned.contains(&id) {
                Some(Rejection::Pruned)
            } else if self.entries.contains(&id) {
                Some(Rejection::Duplicate)
            } else if self.is_full() {
                Some(Rejection::PoolFull)
            } else {
                None
            };
            match reason {
                Some(r) => out.rejected.push((id.to_string(), r)),
                None => {
                    self.entries.push(id.clone());
                    out.accepted.push(id);
                }
            }
        }
        Ok(out)
    }

    /// Removes an entry, returning whether it was present.
    pub fn remove(&mut self, id: &ApiIdentifier) -> bool {
        let before = self.entries.len();
        self.entries.retain(|e| e != id);
        before != self.entries.len()
    }

    /// Removes an entry and bars it from being added again.
    pub fn prune(&mut self, id: &ApiIdentifier) -> bool {
        self.pruned.insert(id.clone());
        self.remove(id)
    }
}

/// Registry plus pool: everything a later reflection round resumes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalState {
    pub registry: AgentRegistry,
    pub pool: CandidatePool,
}

impl RetrievalState {
    pub fn new(pool_cap: usize) -> Self {
        Self {
            registry: AgentRegistry::new(),
            pool: CandidatePool::new(pool_cap),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetrievalStop {
    Solvable,
    PoolFull,
    AllFinished,
    /// Nothing left to schedule, but some agents are parked rather than
    /// finished.
    Idle,
    Budget,
}

impl fmt::Display for RetrievalStop {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RetrievalStop::Solvable => "solvable",
            RetrievalStop::PoolFull => "pool full",
            RetrievalStop::AllFinished => "all agents finished",
            RetrievalStop::Idle => "agents idle",
            RetrievalStop::Budget => "budget",
        })
    }
}

#[derive(Debug, Clone)]
pub struct Retrieval {
    pub state: RetrievalState,
    pub stop: RetrievalStop,
}

pub(crate) fn string_param(name: &str, description: &str) -> ParamSchema {
    ParamSchema::new(name, "string", true, description)
}

pub(crate) fn string_list_param(name: &str, description: &str) -> ParamSchema {
    ParamSchema::new(name, "array", true, description).with_items(json!({"type": "string"}))
}

pub(crate) fn api_list_param(description: &str) -> ParamSchema {
    ParamSchema::new("apis", "array", true, description).with_items(json!({
        "type": "object",
        "properties": {
            "category_name": {"type": "string"},
            "tool_name": {"type": "string"},
            "api_name": {"type": "string"}
        },
        "required": ["tool_name", "api_name"]
    }))
}

pub(crate) fn schema_get_tools_in_category() -> FunctionSchema {
    FunctionSchema::new(f::GET_TOOLS_IN_CATEGORY, "Get tool names under a category.")
        .param(string_param("category_name", "category to list"))
}

pub(crate) fn schema_get_tool_descriptions() -> FunctionSchema {
    FunctionSchema::new(f::GET_TOOL_DESCRIPTIONS, "Get description of each tool.")
        .param(string_list_param("tools", "tool names"))
}

pub(crate) fn schema_get_apis_in_tool() -> FunctionSchema {
    FunctionSchema::new(f::GET_APIS_IN_TOOL, "Get API names under a tool.")
        .param(string_param("tool_name", "tool to list"))
}

pub(crate) fn schema_get_api_details() -> FunctionSchema {
    FunctionSchema::new(
        f::GET_API_DETAILS,
        "Get the description, parameters and response of each API.",
    )
    .param(api_list_param("APIs to describe"))
}

pub(crate) fn schema_add_apis() -> FunctionSchema {
    FunctionSchema::new(f::ADD_APIS, "Add APIs into candidate pool.")
        .param(api_list_param("APIs to add"))
}

pub(crate) fn schema_remove_apis() -> FunctionSchema {
    FunctionSchema::new(f::REMOVE_APIS, "Remove APIs from the candidate pool.")
        .param(api_list_param("APIs to remove"))
}

pub(crate) fn schema_check_solvable() -> FunctionSchema {
    FunctionSchema::new(
        f::CHECK_SOLVABLE,
        "Check whether the query is solvable using the current candidate pool.",
    )
}

pub(crate) fn schema_finish_search() -> FunctionSchema {
    FunctionSchema::new(f::FINISH_SEARCH, "Send out finish signal.")
}

/// The function list offered to an agent of `tier`.
pub fn schemas_for(tier: Tier) -> Vec<FunctionSchema> {
    match tier {
        Tier::Meta => vec![
            FunctionSchema::new(f::CREATE_CATEGORY_AGENT, "Create a category agent.")
                .param(string_param("category_name", "category the new agent will search")),
            schema_get_tools_in_category(),
            schema_get_tool_descriptions(),
            schema_finish_search(),
        ],
        Tier::Category => vec![
            FunctionSchema::new(f::CREATE_TOOL_AGENT, "Create a tool agent.")
                .param(string_list_param("tools", "tools the new agent will search")),
            schema_get_tools_in_category(),
            schema_get_tool_descriptions(),
            schema_finish_search(),
        ],
        Tier::Tool => vec![
            schema_add_apis(),
            schema_get_apis_in_tool(),
            schema_get_api_details(),
            schema_check_solvable(),
            schema_finish_search(),
        ],
    }
}

/// Declared tool and API names, joined with `/`.
pub(crate) fn api_ref_text(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Resolves one entry of an `apis` argument. Accepts an object with
/// `tool_name` / `api_name` (and optionally `category_name`; the short keys
/// `category`, `tool`, `api` also work) or a `tool/api` or
/// `category/tool/api` string. The category defaults to `default_category`.
pub fn parse_api_ref(v: &Value, default_category: Option<&str>, universe: &ApiUniverse) -> Option<ApiIdentifier> {
    let (category, tool, api) = match v {
        Value::String(s) => {
            let parts: Vec<&str> = s.split('/').collect();
            match parts.as_slice() {
                [c, t, a] => (Some(c.to_string()), t.to_string(), a.to_string()),
                [t, a] => (None, t.to_string(), a.to_string()),
                _ => return None,
            }
        }
        Value::Object(m) => {
            let get = |keys: &[&str]| {
                keys.iter()
                    .find_map(|k| m.get(*k).and_then(Value::as_str))
                    .map(str::to_string)
            };
            (
                get(&["category_name", "category"]),
                get(&["tool_name", "tool"])?,
                get(&["api_name", "api"])?,
            )
        }
        _ => return None,
    };
    let category = match category.or_else(|| default_category.map(str::to_string)) {
        Some(c) => c,
        None => universe.find_tool(&tool, None)?.category.clone(),
    };
    if tool.is_empty() || api.is_empty() {
        return None;
    }
    Some(ApiIdentifier::new(category, tool, api))
}

pub(crate) fn api_list(call: &FunctionCallRequest) -> Vec<Value> {
    match call.arguments.get("apis") {
        Some(Value::Array(items)) => items.clone(),
        Some(other) => vec![other.clone()],
        None => match (call.arg_str("tool_name"), call.arg_str("api_name")) {
            (Some(t), Some(a)) => vec![json!({"tool_name": t, "api_name": a})],
            _ => Vec::new(),
        },
    }
}

pub(crate) fn string_list(call: &FunctionCallRequest, key: &str) -> Option<Vec<String>> {
    match call.arguments.get(key)? {
        Value::Array(items) => Some(
            items
                .iter()
                .filter_map(|v| v.as_str().map(str::to_string))
                .collect(),
        ),
        Value::String(s) => Some(s.split(',').map(|t| t.trim().to_string()).filter(|t| !t.is_empty()).collect()),
        _ => None,
    }
}

pub(crate) fn details_json(universe: &ApiUniverse, id: &ApiIdentifier) -> Value {
    match universe.api(id) {
        Some(spec) => json!({
            "api": id.to_string(),
            "description": spec.description,
            "required_parameters": spec.required_params,
            "optional_parameters": spec.optional_params,
            "response": spec.response_description,
        }),
        None => json!({"api": id.to_string(), "error": "API not found"}),
    }
}

pub(crate) fn tool_descriptions_json(universe: &ApiUniverse, tools: &[String], category: Option<&str>) -> String {
    let list: Vec<Value> = universe
        .get_tool_descriptions(tools, category)
        .into_iter()
        .map(|d| match d.description {
            Some(desc) => json!({"tool": d.name, "description": desc}),
            None => json!({"tool": d.name, "error": "tool not found"}),
        })
        .collect();
    Value::Array(list).to_string()
}

pub(crate) fn tools_in_category_text(universe: &ApiUniverse, call: &FunctionCallRequest) -> String {
    match call.arg_str("category_name").or_else(|| call.arg_str("category")) {
        None => "error: missing argument category_name".into(),
        Some(c) => match universe.get_tools_in_category(c) {
            Ok(tools) => json!(tools).to_string(),
            Err(e) => format!("error: {e}"),
        },
    }
}

/// System prompt plus the opening user turn for a new agent.
pub fn bootstrap(kind: &AgentKind, query: &Query, ctx: &RunContext<'_>) -> Result<Vec<Message>> {
    Ok(match kind {
        AgentKind::Meta => {
            let categories = ctx.universe.category_names().join(", ");
            vec![
                Message::system(ctx.prompts.render(PromptId::MetaAgent, &[("categories", &categories)])?),
                Message::user(format!("Query: {}", query.text)),
            ]
        }
        AgentKind::Category { name } => vec![
            Message::system(ctx.prompts.render(PromptId::CategoryAgent, &[])?),
            Message::user(format!("Query: {}\nYour category: {name}", query.text)),
        ],
        AgentKind::Tool { category, tools } => {
            let tools = tools.join(", ");
            vec![
                Message::system(
                    ctx.prompts
                        .render(PromptId::ToolAgent, &[("tools", &tools), ("category", category)])?,
                ),
                Message::user(format!("Query: {}", query.text)),
            ]
        }
    })
}

type AgentCell = Arc<Mutex<AgentRuntime>>;

/// Immutable facts about an agent, readable without locking its cell
/// (which a worker may hold for the length of a model call).
struct AgentEntry {
    id: String,
    kind: AgentKind,
    parent: Option<String>,
    cell: AgentCell,
}

struct StepResult {
    keep_running: bool,
    spawned: Vec<String>,
}

struct Sched {
    queue: VecDeque<String>,
    running: usize,
    done: bool,
}

/// Shared state while agents are being driven.
struct Driver<'a> {
    query: &'a Query,
    ctx: RunContext<'a>,
    config: &'a RetrieverConfig,
    agents: Mutex<Vec<AgentEntry>>,
    pool: Mutex<CandidatePool>,
    stopped: AtomicBool,
    reason: Mutex<Option<RetrievalStop>>,
    sched: Mutex<Sched>,
    wake: Condvar,
}

fn lock<T>(m: &Mutex<T>) -> std::sync::MutexGuard<'_, T> {
    m.lock().expect("retriever lock poisoned")
}

impl<'a> Driver<'a> {
    fn new(query: &'a Query, ctx: RunContext<'a>, config: &'a RetrieverConfig, state: RetrievalState) -> Self {
        let agents = state
            .registry
            .agents
            .into_iter()
            .map(|a| AgentEntry {
                id: a.id.clone(),
                kind: a.kind.clone(),
                parent: a.parent.clone(),
                cell: Arc::new(Mutex::new(a)),
            })
            .collect();
        Self {
            query,
            ctx,
            config,
            agents: Mutex::new(agents),
            pool: Mutex::new(state.pool),
            stopped: AtomicBool::new(false),
            reason: Mutex::new(None),
            sched: Mutex::new(Sched {
                queue: VecDeque::new(),
                running: 0,
                done: false,
            }),
            wake: Condvar::new(),
        }
    }

    fn into_state(self) -> RetrievalState {
        let agents = self
            .agents
            .into_inner()
            .expect("retriever lock poisoned")
            .into_iter()
            .map(|e| Arc::try_unwrap(e.cell).expect("agent still shared").into_inner().expect("agent lock poisoned"))
            .collect();
        RetrievalState {
            registry: AgentRegistry { agents },
            pool: self.pool.into_inner().expect("retriever lock poisoned"),
        }
    }

    fn stopped(&self) -> bool {
        self.stopped.load(Ordering::SeqCst)
    }

    fn raise_stop(&self, reason: RetrievalStop) {
        {
            let mut slot = lock(&self.reason);
            if slot.is_none() {
                *slot = Some(reason);
            }
        }
        self.stopped.store(true, Ordering::SeqCst);
        let _sched = lock(&self.sched);
        self.wake.notify_all();
    }

    fn cell(&self, id: &str) -> Option<AgentCell> {
        lock(&self.agents)
            .iter()
            .find(|e| e.id == id)
            .map(|e| e.cell.clone())
    }

    fn cells(&self) -> Vec<AgentCell> {
        lock(&self.agents).iter().map(|e| e.cell.clone()).collect()
    }

    fn creation_index(&self, id: &str) -> usize {
        lock(&self.agents)
            .iter()
            .position(|e| e.id == id)
            .unwrap_or(usize::MAX)
    }

    fn trace(&self, agent: &str, tier: Tier, event: EventKind, payload: Value) {
        self.ctx.trace.record(agent, tier.as_str(), event, payload);
    }

    /// Registers a child unless one with the same kind already exists
    /// under `parent`. Returns `(id, created)`.
    fn spawn(&self, parent: &str, kind: AgentKind) -> Result<(String, bool)> {
        let mut agents = lock(&self.agents);
        if let Some(existing) = agents
            .iter()
            .find(|e| e.kind == kind && e.parent.as_deref() == Some(parent))
        {
            return Ok((existing.id.clone(), false));
        }
        let dialogue = bootstrap(&kind, self.query, &self.ctx)?;
        let id = next_id(agents.iter().map(|e| &e.kind), kind.tier());
        self.trace(
            &id,
            kind.tier(),
            EventKind::Created,
            json!({"parent": parent, "scope": kind.scope_json()}),
        );
        agents.push(AgentEntry {
            id: id.clone(),
            kind: kind.clone(),
            parent: Some(parent.to_string()),
            cell: Arc::new(Mutex::new(AgentRuntime {
                id: id.clone(),
                kind,
                dialogue,
                status: AgentStatus::Active,
                parent: Some(parent.to_string()),
                parked: false,
                turns: 0,
            })),
        });
        Ok((id, true))
    }

    fn dispatch(
        &self,
        id: &str,
        kind: &AgentKind,
        call: &FunctionCallRequest,
        spawned: &mut Vec<String>,
        finished: &mut bool,
    ) -> String {
        let tier = kind.tier();
        self.trace(
            id,
            tier,
            EventKind::FunctionCall,
            json!({"name": call.name, "arguments": call.arguments}),
        );
        match call.name.as_str() {
            f::FINISH_SEARCH => {
                *finished = true;
                "finished".into()
            }
            f::GET_TOOLS_IN_CATEGORY => tools_in_category_text(self.ctx.universe, call),
            f::GET_TOOL_DESCRIPTIONS => match string_list(call, "tools") {
                Some(tools) => tool_descriptions_json(self.ctx.universe, &tools, kind.category()),
                None => "error: missing argument tools".into(),
            },
            f::CREATE_CATEGORY_AGENT => self.create_category(id, call, spawned),
            f::CREATE_TOOL_AGENT => self.create_tool(id, kind, call, spawned),
            f::GET_APIS_IN_TOOL => self.apis_in_tool(kind, call),
            f::GET_API_DETAILS => {
                let list: Vec<Value> = api_list(call)
                    .iter()
                    .map(|v| match parse_api_ref(v, kind.category(), self.ctx.universe) {
                        Some(api) => details_json(self.ctx.universe, &api),
                        None => json!({"api": api_ref_text(v), "error": "unparseable API reference"}),
                    })
                    .collect();
                Value::Array(list).to_string()
            }
            f::ADD_APIS => self.add_apis(id, kind, call),
            f::CHECK_SOLVABLE => self.check_solvable(id),
            other => format!("function {other} does not exist"),
        }
    }

    fn create_category(&self, id: &str, call: &FunctionCallRequest, spawned: &mut Vec<String>) -> String {
        let Some(name) = call.arg_str("category_name").or_else(|| call.arg_str("category")) else {
            return "error: missing argument category_name".into();
        };
        if self.ctx.universe.category(name).is_none() {
            return format!("error: category not found: {name}");
        }
        match self.spawn(id, AgentKind::Category { name: name.to_string() }) {
            Ok((child, true)) => {
                spawned.push(child.clone());
                format!("created category agent {child} for {name}")
            }
            Ok((child, false)) => format!("category agent {child} for {name} already exists"),
            Err(e) => format!("error: {e}"),
        }
    }

    fn create_tool(
        &self,
        id: &str,
        kind: &AgentKind,
        call: &FunctionCallRequest,
        spawned: &mut Vec<String>,
    ) -> String {
        let AgentKind::Category { name: category } = kind else {
            return "error: only category agents can create tool agents".into();
        };
        let mut tools: Vec<String> = Vec::new();
        for t in string_list(call, "tools").unwrap_or_default() {
            if !tools.contains(&t) {
                tools.push(t);
            }
        }
        if tools.is_empty() {
            return "error: tool list is empty".into();
        }
        if let Some(bad) = tools
            .iter()
            .find(|t| self.ctx.universe.find_tool(t, Some(category)).is_none())
        {
            return format!("error: tool {bad} is not in category {category}");
        }
        let mut warning = String::new();
        if tools.len() > self.config.max_tools {
            warning = format!(
                "; warning: {} tools requested, only the first {} were assigned",
                tools.len(),
                self.config.max_tools
            );
            tools.truncate(self.config.max_tools);
        }
        let listed = tools.join(", ");
        let kind = AgentKind::Tool {
            category: category.clone(),
            tools,
        };
        match self.spawn(id, kind) {
            Ok((child, true)) => {
                spawned.push(child.clone());
                format!("created tool agent {child} for {listed}{warning}")
            }
            Ok((child, false)) => format!("tool agent {child} for {listed} already exists{warning}"),
            Err(e) => format!("error: {e}"),
        }
    }

    fn apis_in_tool(&self, kind: &AgentKind, call: &FunctionCallRequest) -> String {
        let Some(tool) = call.arg_str("tool_name").or_else(|| call.arg_str("tool")) else {
            return "error: missing argument tool_name".into();
        };
        if let AgentKind::Tool { tools, .. } = kind {
            if !tools.iter().any(|t| t == tool) {
                return format!("error: tool {tool} is outside this agent's tools");
            }
        }
        match self.ctx.universe.get_apis_in_tool(tool, kind.category()) {
            Ok(apis) => json!(apis).to_string(),
            Err(e) => format!("error: {e}"),
        }
    }

    fn add_apis(&self, id: &str, kind: &AgentKind, call: &FunctionCallRequest) -> String {
        let AgentKind::Tool { category, tools } = kind else {
            return "error: only tool agents can add APIs".into();
        };
        let mut early: Vec<(String, Rejection)> = Vec::new();
        let mut candidates = Vec::new();
        for v in api_list(call) {
            match parse_api_ref(&v, Some(category), self.ctx.universe) {
                None => early.push((api_ref_text(&v), Rejection::Unparseable)),
                Some(api) if self.ctx.universe.api(&api).is_none() => {
                    early.push((api.to_string(), Rejection::NotFound))
                }
                Some(api) if &api.category != category || !tools.contains(&api.tool) => {
                    early.push((api.to_string(), Rejection::OutOfScope))
                }
                Some(api) => candidates.push(api),
            }
        }
        let (outcome, size, full) = {
            let mut pool = lock(&self.pool);
            match pool.add(candidates) {
                Ok(o) => (o, pool.len(), pool.is_full()),
                Err(e) => return format!("error: {e}"),
            }
        };
        let mut rejected = early;
        rejected.extend(outcome.rejected);
        let accepted: Vec<String> = outcome.accepted.iter().map(ToString::to_string).collect();
        let rejected_json: Vec<Value> = rejected
            .iter()
            .map(|(api, r)| json!({"api": api, "reason": r.to_string()}))
            .collect();
        self.trace(
            id,
            Tier::Tool,
            EventKind::PoolAdd,
            json!({"accepted": accepted, "rejected": rejected_json, "pool_size": size}),
        );
        if full {
            self.raise_stop(RetrievalStop::PoolFull);
        }
        json!({"accepted": accepted.len(), "pool_size": size, "rejected": rejected_json}).to_string()
    }

    fn check_solvable(&self, id: &str) -> String {
        let entries = lock(&self.pool).entries().to_vec();
        if entries.is_empty() {
            warn!(agent = id, "solvability check on an empty pool");
            self.trace(id, Tier::Tool, EventKind::Judge, json!({"solvable": false, "note": "empty pool"}));
            return "False (the candidate pool is empty)".into();
        }
        if self.config.solvability == SolvabilityPolicy::Never {
            return "False".into();
        }
        match self
            .ctx
            .judge
            .judge_solvability(self.query, &entries, self.ctx.universe, self.ctx.meter)
        {
            Ok(s) => {
                self.trace(
                    id,
                    Tier::Tool,
                    EventKind::Judge,
                    json!({"solvable": s.is_solvable(), "rationale": s.rationale(), "pool_size": entries.len()}),
                );
                if s.is_solvable() {
                    lock(&self.pool).close();
                    self.raise_stop(RetrievalStop::Solvable);
                    "True".into()
                } else {
                    "False".into()
                }
            }
            Err(e) if e.is_budget() => {
                self.raise_stop(RetrievalStop::Budget);
                "False".into()
            }
            Err(e) => {
                warn!(agent = id, error = %e, "solvability judge failed");
                self.trace(id, Tier::Tool, EventKind::Warning, json!({"judge_error": e.to_string()}));
                "False".into()
            }
        }
    }

    /// One model turn for one agent.
    fn step(&self, id: &str) -> StepResult {
        let idle = StepResult {
            keep_running: false,
            spawned: Vec::new(),
        };
        let Some(cell) = self.cell(id) else {
            return idle;
        };
        let mut agent = lock(&cell);
        if !agent.is_ready() || self.stopped() {
            return idle;
        }
        let tier = agent.tier();
        if agent.turns >= self.config.max_iterations {
            agent.parked = true;
            self.trace(id, tier, EventKind::Warning, json!({"parked": "iteration guard"}));
            return idle;
        }
        let schemas = schemas_for(tier);
        let reply = match chat(self.ctx.backend, &agent.dialogue, &schemas, self.ctx.meter) {
            Ok(r) => r,
            Err(e) if e.is_budget() => {
                self.raise_stop(RetrievalStop::Budget);
                return idle;
            }
            Err(e) => {
                warn!(agent = id, error = %e, "model call failed; parking agent");
                agent.parked = true;
                self.trace(id, tier, EventKind::Warning, json!({"parked": e.to_string()}));
                return idle;
            }
        };
        if self.stopped() {
            debug!(agent = id, "discarding reply received after stop");
            self.trace(id, tier, EventKind::Warning, json!({"discarded": "reply after stop"}));
            return idle;
        }
        agent.turns += 1;
        self.trace(
            id,
            tier,
            EventKind::ModelCall,
            json!({
                "prompt_tokens": reply.usage.prompt,
                "completion_tokens": reply.usage.completion,
                "call": reply.call().map(|c| c.name.clone()),
            }),
        );
        let kind = agent.kind.clone();
        let mut spawned = Vec::new();
        let mut finished = false;
        let called = apply_reply(&mut agent.dialogue, &reply, &schemas, &mut |call| {
            self.dispatch(id, &kind, call, &mut spawned, &mut finished)
        })
        .is_some();
        if finished {
            agent.status = AgentStatus::Finished;
            self.trace(id, tier, EventKind::Finish, json!({}));
        } else if !called {
            agent.parked = true;
        }
        StepResult {
            keep_running: agent.is_ready() && !self.stopped(),
            spawned,
        }
    }

    fn drive(&self, ready: Vec<String>) {
        if self.config.deterministic || self.config.workers == 1 {
            self.drive_sequential(ready);
        } else {
            self.drive_concurrent(ready);
        }
    }

    fn drive_sequential(&self, mut ready: Vec<String>) {
        while !ready.is_empty() && !self.stopped() {
            ready.sort_by_key(|id| self.creation_index(id));
            ready.dedup();
            let mut next = Vec::new();
            for id in &ready {
                if self.stopped() {
                    break;
                }
                let r = self.step(id);
                if r.keep_running {
                    next.push(id.clone());
                }
                next.extend(r.spawned);
            }
            ready = next;
        }
    }

    fn drive_concurrent(&self, ready: Vec<String>) {
        {
            let mut s = lock(&self.sched);
            s.queue = ready.into();
            s.running = 0;
            s.done = s.queue.is_empty();
        }
        std::thread::scope(|scope| {
            for _ in 0..self.config.workers {
                scope.spawn(|| self.worker());
            }
        });
    }

    fn worker(&self) {
        loop {
            let id = {
                let mut s = lock(&self.sched);
                loop {
                    if s.done || self.stopped() {
                        return;
                    }
                    if let Some(id) = s.queue.pop_front() {
                        s.running += 1;
                        break id;
                    }
                    if s.running == 0 {
                        s.done = true;
                        self.wake.notify_all();
                        return;
                    }
                    s = self.wake.wait(s).expect("retriever lock poisoned");
                }
            };
            loop {
                let r = self.step(&id);
                if !r.spawned.is_empty() {
                    lock(&self.sched).queue.extend(r.spawned);
                    self.wake.notify_all();
                }
                if !r.keep_running {
                    break;
                }
            }
            let mut s = lock(&self.sched);
            s.running -= 1;
            if s.running == 0 && s.queue.is_empty() {
                s.done = true;
            }
            self.wake.notify_all();
        }
    }

    fn final_stop(&self) -> RetrievalStop {
        if let Some(r) = *lock(&self.reason) {
            return r;
        }
        if self.cells().iter().all(|c| lock(c).is_finished()) {
            RetrievalStop::AllFinished
        } else {
            RetrievalStop::Idle
        }
    }
}

/// Schedules `ready` (and anything they spawn) until a stop condition.
/// Used both for fresh runs and for reflection resumes.
pub fn drive_agents(
    query: &Query,
    ctx: RunContext<'_>,
    config: &RetrieverConfig,
    state: RetrievalState,
    ready: Vec<String>,
) -> Retrieval {
    let driver = Driver::new(query, ctx, config, state);
    if ctx.meter.is_exhausted() {
        driver.raise_stop(RetrievalStop::Budget);
    } else {
        driver.drive(ready);
    }
    let stop = driver.final_stop();
    let pool_size = lock(&driver.pool).len();
    ctx.trace.record(
        "retriever",
        "retriever",
        EventKind::Stop,
        json!({"reason": stop.to_string(), "pool_size": pool_size}),
    );
    Retrieval {
        state: driver.into_state(),
        stop,
    }
}

/// Starts the meta agent, or resumes every ready agent of `existing`.
pub fn run_retrieval(
    query: &Query,
    ctx: RunContext<'_>,
    config: &RetrieverConfig,
    existing: Option<RetrievalState>,
) -> Result<Retrieval> {
    config.validate()?;
    let mut state = existing.unwrap_or_else(|| RetrievalState::new(config.pool_cap));
    if state.registry.meta().is_none() {
        let dialogue = bootstrap(&AgentKind::Meta, query, &ctx)?;
        ctx.trace
            .record("meta", "meta", EventKind::Created, json!({"parent": null, "scope": null}));
        state.registry.insert(AgentRuntime {
            id: "meta".into(),
            kind: AgentKind::Meta,
            dialogue,
            status: AgentStatus::Active,
            parent: None,
            parked: false,
            turns: 0,
        })?;
    }
    let ready = state
        .registry
        .agents()
        .iter()
        .filter(|a| a.is_ready())
        .map(|a| a.id.clone())
        .collect();
    Ok(drive_agents(query, ctx, config, state, ready))
}
