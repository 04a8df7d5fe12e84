//! Query resolution against the candidate pool.
//!
//! The model sees one function per pool API plus `finish`, which ends the
//! attempt with one of three outcomes. Under [`SolverStrategy::Cot`] the
//! dialogue is a single line of calls. Under [`SolverStrategy::Dfsdt`]
//! every API call opens a child node of a decision tree and
//! `try_backtrack` abandons the current node for its parent.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use tracing::warn;

use crate::catalog::{ApiError, ApiIdentifier, ApiUniverse};
use crate::error::Result;
use crate::eval::Query;
use crate::llm::{
    apply_reply, chat, BudgetMeter, ChatBackend, FunctionSchema, Message, ParamSchema, TokenUsage,
    DEFAULT_MAX_ITERATIONS,
};
use crate::prompts::{PromptId, PromptSet};
use crate::retriever::CandidatePool;
use crate::trace::{EventKind, Trace};

pub const FINISH: &str = "finish";
pub const DEFAULT_MAX_API_CALLS: usize = 10;
pub const BACKTRACK_NOTE: &str = "previous attempt failed, trying an alternative";
const MAX_NAME_LEN: usize = 64;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverStrategy {
    Cot,
    #[default]
    Dfsdt,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolverConfig {
    pub max_api_calls: usize,
    pub strategy: SolverStrategy,
    /// Defaults to `max_api_calls`.
    pub max_depth: Option<usize>,
    /// Model turns before the attempt is abandoned.
    pub max_turns: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_api_calls: DEFAULT_MAX_API_CALLS,
            strategy: SolverStrategy::Dfsdt,
            max_depth: None,
            max_turns: DEFAULT_MAX_ITERATIONS,
        }
    }
}

impl SolverConfig {
    pub fn max_depth(&self) -> usize {
        self.max_depth.unwrap_or(self.max_api_calls)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "outcome")]
pub enum FinishOutcome {
    GiveSolution { answer: String },
    TryBacktrack,
    GiveUp { reason: String, blamed: Vec<String> },
}

impl FinishOutcome {
    pub fn give_up(reason: impl Into<String>) -> Self {
        FinishOutcome::GiveUp {
            reason: reason.into(),
            blamed: Vec::new(),
        }
    }

    pub fn is_solution(&self) -> bool {
        matches!(self, FinishOutcome::GiveSolution { .. })
    }

    pub fn answer(&self) -> Option<&str> {
        match self {
            FinishOutcome::GiveSolution { answer } => Some(answer),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiCallRecord {
    pub id: ApiIdentifier,
    pub args: Map<String, Value>,
    #[serde(with = "call_result")]
    pub result: std::result::Result<String, ApiError>,
}

mod call_result {
    use super::ApiError;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(rename_all = "snake_case")]
    enum Repr {
        Ok(String),
        Error(String),
    }

    pub fn serialize<S: Serializer>(r: &Result<String, ApiError>, s: S) -> Result<S::Ok, S::Error> {
        match r {
            Ok(v) => Repr::Ok(v.clone()),
            Err(e) => Repr::Error(e.to_string()),
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Result<String, ApiError>, D::Error> {
        Ok(match Repr::deserialize(d)? {
            Repr::Ok(v) => Ok(v),
            Repr::Error(e) => Err(ApiError::Api(e)),
        })
    }
}

/// Node of the decision tree. The root holds the opening dialogue; every
/// other node was opened by one API call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverNode {
    pub id: usize,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    pub depth: usize,
    pub dead: bool,
    #[serde(skip)]
    dialogue: Vec<Message>,
    call: Option<ApiCallRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverResult {
    /// Never `TryBacktrack`.
    pub outcome: FinishOutcome,
    /// Every pool-API call made, dead branches included, in call order.
    pub api_calls: Vec<ApiCallRecord>,
    /// Calls on the path from the root to the final node.
    pub path_calls: Vec<ApiCallRecord>,
    /// Dialogue of the final node.
    pub dialogue: Vec<Message>,
    pub usage: TokenUsage,
    pub nodes: Vec<SolverNode>,
    /// Node ids in the order they became active.
    pub visits: Vec<usize>,
    /// Schema name offered for each pool API.
    pub offered: BTreeMap<String, ApiIdentifier>,
}

impl SolverResult {
    /// Pool APIs named by a give-up outcome.
    pub fn blamed_apis(&self) -> Vec<ApiIdentifier> {
        match &self.outcome {
            FinishOutcome::GiveUp { blamed, .. } => blamed
                .iter()
                .filter_map(|name| self.offered.get(name).cloned())
                .collect(),
            _ => Vec::new(),
        }
    }

    pub fn dead_nodes(&self) -> usize {
        self.nodes.iter().filter(|n| n.dead).count()
    }
}

fn sanitize_segment(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '_' || c == '-' { c } else { '_' })
        .collect()
}

fn truncate(s: &str, max: usize) -> String {
    s.chars().take(max).collect()
}

/// Function names for pool entries: sanitized segments joined by `__`,
/// at most 64 characters, made unique with `_2`, `_3`, ... suffixes.
pub fn schema_names(ids: &[ApiIdentifier]) -> Vec<String> {
    let mut used: Vec<String> = vec![FINISH.to_string()];
    let mut out = Vec::with_capacity(ids.len());
    for id in ids {
        let base = truncate(
            &format!(
                "{}__{}__{}",
                sanitize_segment(&id.category),
                sanitize_segment(&id.tool),
                sanitize_segment(&id.api)
            ),
            MAX_NAME_LEN,
        );
        let mut name = base.clone();
        let mut n = 2;
        while used.contains(&name) {
            let suffix = format!("_{n}");
            name = format!("{}{suffix}", truncate(&base, MAX_NAME_LEN - suffix.len()));
            n += 1;
        }
        used.push(name.clone());
        out.push(name);
    }
    out
}

fn json_type(kind: &str) -> &'static str {
    match kind.to_ascii_lowercase().as_str() {
        "number" | "float" | "double" => "number",
        "integer" | "int" => "integer",
        "boolean" | "bool" => "boolean",
        "array" | "list" => "array",
        "object" | "dict" => "object",
        _ => "string",
    }
}

/// One schema per resolvable pool entry, paired with its identifier.
/// Entries missing from the universe are skipped with a warning.
pub fn render_pool_schemas(pool: &[ApiIdentifier], universe: &ApiUniverse) -> Vec<(FunctionSchema, ApiIdentifier)> {
    let resolvable: Vec<ApiIdentifier> = pool
        .iter()
        .filter(|id| {
            let ok = universe.api(id).is_some();
            if !ok {
                warn!(api = %id, "pool entry not in universe; not offered to the solver");
            }
            ok
        })
        .cloned()
        .collect();
    let names = schema_names(&resolvable);
    resolvable
        .into_iter()
        .zip(names)
        .map(|(id, name)| {
            let spec = universe.api(&id).expect("filtered above");
            let tool_desc = universe.tool_of(&id).map(|t| t.description.as_str()).unwrap_or("");
            let mut description = format!("{} / {}", id.tool, id.api);
            for part in [tool_desc, spec.description.as_str()] {
                if !part.is_empty() {
                    description.push_str(". ");
                    description.push_str(part);
                }
            }
            if !spec.response_description.is_empty() {
                description.push_str(". Returns: ");
                description.push_str(&spec.response_description);
            }
            let mut schema = FunctionSchema::new(name, description);
            for (params, required) in [(&spec.required_params, true), (&spec.optional_params, false)] {
                for p in params {
                    schema = schema.param(ParamSchema::new(&p.name, json_type(&p.kind), required, &p.description));
                }
            }
            (schema, id)
        })
        .collect()
}

pub fn finish_schema(strategy: SolverStrategy) -> FunctionSchema {
    let outcomes: &[&str] = match strategy {
        SolverStrategy::Dfsdt => &["give_solution", "try_backtrack", "give_up"],
        SolverStrategy::Cot => &["give_solution", "give_up"],
    };
    FunctionSchema::new(
        FINISH,
        "End the attempt: give the final answer, backtrack to an earlier state, or give up naming the failing functions.",
    )
    .param(ParamSchema::new("outcome", "string", true, "how the attempt ends").with_enum(outcomes.iter().copied()))
    .param(ParamSchema::new("answer", "string", false, "final answer for give_solution"))
    .param(ParamSchema::new("reason", "string", false, "why the attempt failed, for give_up"))
    .param(
        ParamSchema::new("blamed_functions", "array", false, "functions responsible for the failure")
            .with_items(json!({"type": "string"})),
    )
}

/// Task description naming the query and the functions on offer.
pub fn task_description(query: &Query, schemas: &[FunctionSchema]) -> String {
    let names: Vec<&str> = schemas.iter().map(|s| s.name.as_str()).collect();
    format!("{}\nAvailable functions: {}", query.text, names.join(", "))
}

pub fn bootstrap(query: &Query, schemas: &[FunctionSchema], prompts: &PromptSet) -> Result<Vec<Message>> {
    let system = prompts.render(PromptId::Solver, &[("task_description", &task_description(query, schemas))])?;
    Ok(vec![Message::system(system), Message::user(query.text.clone())])
}

/// Matches model-supplied blame names against the offered names: exact
/// (case-insensitive), then the bare API or `tool/api` form when unique.
fn resolve_blame(raw: &str, offered: &BTreeMap<String, ApiIdentifier>) -> Option<String> {
    let needle = raw.trim().to_ascii_lowercase();
    if let Some(name) = offered.keys().find(|n| n.to_ascii_lowercase() == needle) {
        return Some(name.clone());
    }
    let hits: Vec<&String> = offered
        .iter()
        .filter(|(_, id)| {
            [
                id.api.clone(),
                format!("{}/{}", id.tool, id.api),
                format!("{}.{}", id.tool, id.api),
                id.to_string(),
                format!("{}.{}.{}", id.category, id.tool, id.api),
            ]
            .iter()
            .any(|form| form.to_ascii_lowercase() == needle)
        })
        .map(|(name, _)| name)
        .collect();
    match hits.as_slice() {
        [one] => Some((*one).clone()),
        _ => None,
    }
}

fn parse_finish(args: &Map<String, Value>, offered: &BTreeMap<String, ApiIdentifier>) -> Option<FinishOutcome> {
    let text = |k: &str| args.get(k).and_then(Value::as_str).map(str::to_string);
    let outcome = text("outcome").or_else(|| text("return_type"));
    match outcome.as_deref() {
        Some("give_solution") => Some(FinishOutcome::GiveSolution {
            answer: text("answer").or_else(|| text("final_answer")).unwrap_or_default(),
        }),
        None if text("answer").is_some() => Some(FinishOutcome::GiveSolution {
            answer: text("answer").unwrap_or_default(),
        }),
        Some("try_backtrack") => Some(FinishOutcome::TryBacktrack),
        Some("give_up") | Some("give_up_and_restart") => {
            let mut reason = text("reason").unwrap_or_default();
            let raw: Vec<String> = match args.get("blamed_functions") {
                Some(Value::Array(items)) => items.iter().filter_map(|v| v.as_str().map(str::to_string)).collect(),
                Some(Value::String(s)) => vec![s.clone()],
                _ => Vec::new(),
            };
            let mut blamed = Vec::new();
            let mut unknown = Vec::new();
            for b in raw {
                match resolve_blame(&b, offered) {
                    Some(name) if !blamed.contains(&name) => blamed.push(name),
                    Some(_) => {}
                    None => unknown.push(b),
                }
            }
            let unmentioned: Vec<&String> = unknown.iter().filter(|u| !reason.contains(u.as_str())).collect();
            if !unmentioned.is_empty() {
                let names: Vec<&str> = unmentioned.iter().map(|s| s.as_str()).collect();
                reason.push_str(&format!(" (also blamed: {})", names.join(", ")));
            }
            Some(FinishOutcome::GiveUp { reason, blamed })
        }
        _ => None,
    }
}

struct Tree {
    nodes: Vec<SolverNode>,
    active: usize,
    visits: Vec<usize>,
}

impl Tree {
    fn new(root: Vec<Message>) -> Self {
        Self {
            nodes: vec![SolverNode {
                id: 0,
                parent: None,
                children: Vec::new(),
                depth: 0,
                dead: false,
                dialogue: root,
                call: None,
            }],
            active: 0,
            visits: vec![0],
        }
    }

    fn dialogue(&self) -> &Vec<Message> {
        &self.nodes[self.active].dialogue
    }

    fn dialogue_mut(&mut self) -> &mut Vec<Message> {
        &mut self.nodes[self.active].dialogue
    }

    fn depth(&self) -> usize {
        self.nodes[self.active].depth
    }

    /// Opens a child of the active node holding `dialogue`.
    fn descend(&mut self, dialogue: Vec<Message>, call: ApiCallRecord) -> usize {
        let id = self.nodes.len();
        let depth = self.depth() + 1;
        self.nodes.push(SolverNode {
            id,
            parent: Some(self.active),
            children: Vec::new(),
            depth,
            dead: false,
            dialogue,
            call: Some(call),
        });
        self.nodes[self.active].children.push(id);
        self.active = id;
        self.visits.push(id);
        id
    }

    /// Marks the active node dead and reactivates its parent with a note.
    /// Returns `false` at the root.
    fn backtrack(&mut self) -> bool {
        let Some(parent) = self.nodes[self.active].parent else {
            return false;
        };
        self.nodes[self.active].dead = true;
        self.active = parent;
        self.nodes[parent].dialogue.push(Message::user(BACKTRACK_NOTE));
        self.visits.push(parent);
        true
    }

    fn path_calls(&self) -> Vec<ApiCallRecord> {
        let mut calls = Vec::new();
        let mut at = Some(self.active);
        while let Some(i) = at {
            if let Some(c) = &self.nodes[i].call {
                calls.push(c.clone());
            }
            at = self.nodes[i].parent;
        }
        calls.reverse();
        calls
    }
}

/// Runs one solver attempt. `seed`, when given, replaces the fresh
/// bootstrap dialogue (reflection passes the cleaned previous dialogue).
#[allow(clippy::too_many_arguments)]
pub fn solve(
    query: &Query,
    pool: &CandidatePool,
    universe: &ApiUniverse,
    backend: &dyn ChatBackend,
    prompts: &PromptSet,
    config: &SolverConfig,
    meter: &BudgetMeter,
    trace: &Trace,
    seed: Option<Vec<Message>>,
) -> Result<SolverResult> {
    let rendered = render_pool_schemas(pool.entries(), universe);
    let offered: BTreeMap<String, ApiIdentifier> =
        rendered.iter().map(|(s, id)| (s.name.clone(), id.clone())).collect();
    let mut schemas: Vec<FunctionSchema> = rendered.into_iter().map(|(s, _)| s).collect();
    let root = match seed {
        Some(d) => d,
        None => bootstrap(query, &schemas, prompts)?,
    };
    let mut tree = Tree::new(root);
    let mut api_calls: Vec<ApiCallRecord> = Vec::new();
    let mut usage = TokenUsage::default();
    let record = |event: EventKind, payload: Value| trace.record("solver", "solver", event, payload);

    let finish = |tree: Tree, outcome: FinishOutcome, api_calls: Vec<ApiCallRecord>, usage: TokenUsage| {
        trace.record("solver", "solver", EventKind::SolverFinish, json!({"outcome": outcome, "node": tree.active}));
        SolverResult {
            path_calls: tree.path_calls(),
            dialogue: tree.dialogue().clone(),
            outcome,
            api_calls,
            usage,
            visits: tree.visits,
            nodes: tree.nodes,
            offered: offered.clone(),
        }
    };

    if schemas.is_empty() {
        return Ok(finish(tree, FinishOutcome::give_up("no candidate APIs"), api_calls, usage));
    }
    schemas.push(finish_schema(config.strategy));
    record(EventKind::SolverNode, json!({"node": 0, "parent": null, "depth": 0}));

    let mut turns = 0;
    loop {
        if turns >= config.max_turns {
            return Ok(finish(tree, FinishOutcome::give_up("iteration guard"), api_calls, usage));
        }
        let reply = match chat(backend, tree.dialogue(), &schemas, meter) {
            Ok(r) => r,
            Err(e) if e.is_budget() => {
                return Ok(finish(tree, FinishOutcome::give_up("token budget"), api_calls, usage))
            }
            Err(e) => {
                return Ok(finish(tree, FinishOutcome::give_up(format!("model error: {e}")), api_calls, usage))
            }
        };
        turns += 1;
        usage.prompt += reply.usage.prompt;
        usage.completion += reply.usage.completion;
        record(
            EventKind::ModelCall,
            json!({"node": tree.active, "prompt_tokens": reply.usage.prompt,
                   "completion_tokens": reply.usage.completion, "call": reply.call().map(|c| c.name.clone())}),
        );

        let Some(call) = reply.call().cloned() else {
            tree.dialogue_mut().push(reply.clone().into_message());
            let reason = reply.text().unwrap_or_default().to_string();
            return Ok(finish(tree, FinishOutcome::give_up(reason), api_calls, usage));
        };

        if call.name == FINISH && call.malformed_arguments.is_none() {
            let parsed = parse_finish(&call.arguments, &offered);
            let outcome = match (parsed, config.strategy) {
                (None, _) => {
                    let schemas_ref = &schemas;
                    apply_reply(tree.dialogue_mut(), &reply, schemas_ref, &mut |_| {
                        "error: outcome must be one of the listed values".into()
                    });
                    continue;
                }
                (Some(FinishOutcome::TryBacktrack), SolverStrategy::Cot) => {
                    FinishOutcome::give_up("attempt failed and backtracking is unavailable")
                }
                (Some(FinishOutcome::TryBacktrack), SolverStrategy::Dfsdt) => {
                    if tree.backtrack() {
                        record(EventKind::Backtrack, json!({"to": tree.active, "depth": tree.depth()}));
                        continue;
                    }
                    FinishOutcome::give_up("no alternatives at root")
                }
                (Some(o), _) => o,
            };
            apply_reply(tree.dialogue_mut(), &reply, &schemas, &mut |_| "finished".into());
            return Ok(finish(tree, outcome, api_calls, usage));
        }

        let target = offered.get(&call.name).cloned();
        if target.is_some() && call.malformed_arguments.is_none() {
            if api_calls.len() >= config.max_api_calls {
                return Ok(finish(tree, FinishOutcome::give_up("call budget exhausted"), api_calls, usage));
            }
            if config.strategy == SolverStrategy::Dfsdt && tree.depth() >= config.max_depth() {
                // Too deep to open another node: behave as if the model
                // asked to backtrack.
                if tree.backtrack() {
                    record(EventKind::Backtrack, json!({"to": tree.active, "depth": tree.depth(), "auto": true}));
                    continue;
                }
                return Ok(finish(tree, FinishOutcome::give_up("no alternatives at root"), api_calls, usage));
            }
        }

        let mut dialogue = tree.dialogue().clone();
        let mut made: Option<ApiCallRecord> = None;
        apply_reply(&mut dialogue, &reply, &schemas, &mut |c| {
            let id = target.clone().expect("dispatcher only sees offered names other than finish");
            let result = universe.execute_api(&id, &c.arguments);
            let text = match &result {
                Ok(v) => v.clone(),
                Err(e) => format!("error: {e}"),
            };
            made = Some(ApiCallRecord {
                id,
                args: c.arguments.clone(),
                result,
            });
            text
        });
        match made {
            Some(rec) => {
                api_calls.push(rec.clone());
                let ok = rec.result.is_ok();
                let parent = tree.active;
                // Under CoT the tree is a chain, so descending is the same
                // as extending the one dialogue.
                let node = tree.descend(dialogue, rec.clone());
                record(
                    EventKind::SolverNode,
                    json!({"node": node, "parent": parent, "depth": tree.depth(), "api": rec.id.to_string(), "ok": ok}),
                );
            }
            None => *tree.dialogue_mut() = dialogue,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{Condition, Rule, ScriptedBackend};

    fn universe() -> ApiUniverse {
        ApiUniverse::from_json_str(
            r#"{"categories":[{"name":"Finance","tools":[
                {"name":"CurrencyX","description":"fx","apis":[
                  {"name":"convert","description":"convert money",
                   "required_params":[{"name":"amount","type":"NUMBER","description":"amount"}]},
                  {"name":"rates","description":"rate table"}]}]}],
              "scripted_responses":[
                {"category":"Finance","tool":"CurrencyX","api":"convert","args":"*","response":"0.92"},
                {"category":"Finance","tool":"CurrencyX","api":"rates","args":"*","response":"EUR 0.92"}]}"#,
        )
        .unwrap()
    }

    const CONVERT: &str = "Finance__CurrencyX__convert";
    const RATES: &str = "Finance__CurrencyX__rates";

    fn pool(u: &ApiUniverse) -> CandidatePool {
        let mut p = CandidatePool::new(64);
        p.add(u.apis().map(|a| a.id.clone())).unwrap();
        p
    }

    fn run(rules: Vec<Rule>, config: &SolverConfig) -> SolverResult {
        let u = universe();
        let backend = ScriptedBackend::new(rules).unwrap();
        solve(
            &Query::new("q", "convert 1 USD"),
            &pool(&u),
            &u,
            &backend,
            &PromptSet::default(),
            config,
            &BudgetMeter::default(),
            &Trace::new(),
            None,
        )
        .unwrap()
    }

    #[test]
    fn names_are_sanitized_and_unique() {
        let ids = [
            ApiIdentifier::new("A b", "t.x", "api"),
            ApiIdentifier::new("A_b", "t_x", "api"),
            ApiIdentifier::new("c", "t", "z".repeat(80)),
        ];
        let names = schema_names(&ids);
        assert_eq!(names[0], "A_b__t_x__api");
        assert_eq!(names[1], "A_b__t_x__api_2");
        assert_eq!(names[2].len(), 64);
        assert!(names.iter().all(|n| n.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')));
    }

    #[test]
    fn two_calls_then_solution() {
        let r = run(
            vec![
                Rule::call(Condition::called(RATES), FINISH, json!({"outcome": "give_solution", "answer": "0.92 EUR"})),
                Rule::call(Condition::called(CONVERT), RATES, json!({})),
                Rule::call(Condition::always(), CONVERT, json!({"amount": 1})),
            ],
            &SolverConfig::default(),
        );
        assert_eq!(r.outcome, FinishOutcome::GiveSolution { answer: "0.92 EUR".into() });
        assert_eq!(r.api_calls.len(), 2);
        assert_eq!(r.path_calls, r.api_calls);
        assert_eq!(r.api_calls[0].result, Ok("0.92".to_string()));
        assert!(crate::llm::calls_are_paired(&r.dialogue));
    }

    #[test]
    fn give_up_blames_offered_names() {
        let r = run(
            vec![
                Rule::call(
                    Condition::called(CONVERT),
                    FINISH,
                    json!({"outcome": "give_up", "reason": "convert returns 404", "blamed_functions": ["convert", "ghost"]}),
                ),
                Rule::call(Condition::always(), CONVERT, json!({"amount": 1})),
            ],
            &SolverConfig::default(),
        );
        match &r.outcome {
            FinishOutcome::GiveUp { reason, blamed } => {
                assert_eq!(blamed, &[CONVERT.to_string()]);
                assert!(reason.starts_with("convert returns 404"));
                assert!(reason.contains("ghost"));
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(r.blamed_apis(), [ApiIdentifier::new("Finance", "CurrencyX", "convert")]);
    }

    #[test]
    fn eleventh_call_is_refused() {
        let r = run(vec![Rule::call(Condition::always(), RATES, json!({}))], &SolverConfig {
            max_turns: 100,
            max_depth: Some(100),
            ..Default::default()
        });
        assert_eq!(r.outcome, FinishOutcome::give_up("call budget exhausted"));
        assert_eq!(r.api_calls.len(), 10);
    }

    #[test]
    fn backtrack_moves_to_parent_and_root_backtrack_gives_up() {
        let rules = vec![
            Rule::call(Condition::last_message_contains(BACKTRACK_NOTE), FINISH, json!({"outcome": "try_backtrack"})),
            Rule::call(Condition::called(RATES), FINISH, json!({"outcome": "try_backtrack"})),
            Rule::call(Condition::called(CONVERT), RATES, json!({})),
            Rule::call(Condition::always(), CONVERT, json!({"amount": 1})),
        ];
        let r = run(rules, &SolverConfig::default());
        // convert (depth 1), rates (depth 2), backtrack to 1, backtrack to
        // root, backtrack at root.
        assert_eq!(r.visits, [0, 1, 2, 1, 0]);
        assert_eq!(r.dead_nodes(), 2);
        assert_eq!(r.outcome, FinishOutcome::give_up("no alternatives at root"));
    }

    #[test]
    fn cot_turns_backtrack_into_give_up() {
        let rules = vec![
            Rule::call(Condition::called(CONVERT), FINISH, json!({"outcome": "try_backtrack"})),
            Rule::call(Condition::always(), CONVERT, json!({"amount": 1})),
        ];
        let r = run(rules, &SolverConfig {
            strategy: SolverStrategy::Cot,
            ..Default::default()
        });
        assert!(matches!(r.outcome, FinishOutcome::GiveUp { .. }));
        assert!(r.nodes.iter().all(|n| n.children.len() <= 1));
    }

    #[test]
    fn empty_pool_short_circuits() {
        let u = universe();
        let backend = ScriptedBackend::new(vec![Rule::text(Condition::always(), "x")]).unwrap();
        let meter = BudgetMeter::default();
        let r = solve(
            &Query::new("q", "x"),
            &CandidatePool::new(4),
            &u,
            &backend,
            &PromptSet::default(),
            &SolverConfig::default(),
            &meter,
            &Trace::new(),
            None,
        )
        .unwrap();
        assert_eq!(r.outcome, FinishOutcome::give_up("no candidate APIs"));
        assert_eq!(meter.model_calls(), 0);
    }

    #[test]
    fn text_reply_is_a_give_up_with_that_text() {
        let r = run(vec![Rule::text(Condition::always(), "I give up, nothing works")], &SolverConfig::default());
        assert_eq!(r.outcome, FinishOutcome::give_up("I give up, nothing works"));
    }

    #[test]
    fn token_budget_forces_give_up() {
        let u = universe();
        let backend = ScriptedBackend::new(vec![
            Rule::call(Condition::always(), RATES, json!({})).with_usage(TokenUsage::new(600, 0)),
        ])
        .unwrap();
        let meter = BudgetMeter::new(1000);
        let r = solve(
            &Query::new("q", "x"),
            &pool(&u),
            &u,
            &backend,
            &PromptSet::default(),
            &SolverConfig::default(),
            &meter,
            &Trace::new(),
            None,
        )
        .unwrap();
        assert_eq!(r.outcome, FinishOutcome::give_up("token budget"));
        assert_eq!(r.api_calls.len(), 2);
    }
}
