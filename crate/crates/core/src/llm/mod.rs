//! Function-calling chat models.
//!
//! A [`ChatBackend`] turns a dialogue plus a list of [`FunctionSchema`]s
//! into a single [`ModelReply`]: either a function call or final text.
//! [`chat`] wraps a backend with the shared [`BudgetMeter`], and
//! [`run_function_loop`] drives the call → execute → feed back cycle.

mod remote;
mod scripted;

use std::collections::HashSet;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::error::{Error, Result};

pub use remote::{RemoteBackend, RemoteConfig};
pub use scripted::{Condition, Rule, ScriptedBackend, ScriptedReply};

/// Default global token budget per query run.
pub const DEFAULT_TOKEN_BUDGET: u64 = 200_000;
/// Default per-activation iteration guard for function loops.
pub const DEFAULT_MAX_ITERATIONS: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
    Assistant,
    FunctionResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionCallRequest {
    pub name: String,
    #[serde(default)]
    pub arguments: Map<String, Value>,
    /// Raw argument text the model produced when it was not a JSON object.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub malformed_arguments: Option<String>,
}

impl FunctionCallRequest {
    pub fn new(name: impl Into<String>, arguments: Value) -> Self {
        let arguments = match arguments {
            Value::Object(map) => map,
            Value::Null => Map::new(),
            other => {
                return Self {
                    name: name.into(),
                    arguments: Map::new(),
                    malformed_arguments: Some(other.to_string()),
                }
            }
        };
        Self {
            name: name.into(),
            arguments,
            malformed_arguments: None,
        }
    }

    pub fn arg_str(&self, key: &str) -> Option<&str> {
        self.arguments.get(key).and_then(Value::as_str)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub call: Option<FunctionCallRequest>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub call_result_for: Option<String>,
}

impl Message {
    fn plain(role: Role, content: impl Into<String>) -> Self {
        Self {
            role,
            content: content.into(),
            call: None,
            call_result_for: None,
        }
    }

    pub fn system(content: impl Into<String>) -> Self {
        Self::plain(Role::System, content)
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self::plain(Role::User, content)
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self::plain(Role::Assistant, content)
    }

    pub fn assistant_call(content: impl Into<String>, call: FunctionCallRequest) -> Self {
        Self {
            call: Some(call),
            ..Self::plain(Role::Assistant, content)
        }
    }

    pub fn function_result(function: impl Into<String>, content: impl Into<String>) -> Self {
        Self {
            call_result_for: Some(function.into()),
            ..Self::plain(Role::FunctionResult, content)
        }
    }

    pub fn is_well_formed(&self) -> bool {
        (self.call.is_none() || self.role == Role::Assistant)
            && (self.call_result_for.is_none() || self.role == Role::FunctionResult)
    }

    /// Text used for substring matching: content plus the call, if any.
    pub fn match_text(&self) -> String {
        match &self.call {
            Some(call) => format!(
                "{} {} {}",
                self.content,
                call.name,
                Value::Object(call.arguments.clone())
            ),
            None => self.content.clone(),
        }
    }

    pub fn char_len(&self) -> usize {
        self.match_text().chars().count()
    }
}

/// Every call is immediately followed by exactly one result for the same
/// function, and results never appear on their own.
pub fn calls_are_paired(dialogue: &[Message]) -> bool {
    let mut i = 0;
    while i < dialogue.len() {
        let m = &dialogue[i];
        if !m.is_well_formed() {
            return false;
        }
        if let Some(call) = &m.call {
            match dialogue.get(i + 1) {
                Some(next)
                    if next.role == Role::FunctionResult
                        && next.call_result_for.as_deref() == Some(call.name.as_str()) =>
                {
                    i += 2;
                    continue;
                }
                _ => return false,
            }
        }
        if m.role == Role::FunctionResult {
            return false;
        }
        i += 1;
    }
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSchema {
    pub name: String,
    /// JSON-schema type name (`string`, `number`, `array`, ...).
    #[serde(rename = "type")]
    pub kind: String,
    pub required: bool,
    #[serde(default)]
    pub description: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub items: Option<Value>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub enum_values: Vec<String>,
}

impl ParamSchema {
    pub fn new(
        name: impl Into<String>,
        kind: impl Into<String>,
        required: bool,
        description: impl Into<String>,
    ) -> Self {
        Self {
            name: name.into(),
            kind: kind.into(),
            required,
            description: description.into(),
            items: None,
            enum_values: Vec::new(),
        }
    }

    pub fn with_items(mut self, items: Value) -> Self {
        self.items = Some(items);
        self
    }

    pub fn with_enum<S: Into<String>>(mut self, values: impl IntoIterator<Item = S>) -> Self {
        self.enum_values = values.into_iter().map(Into::into).collect();
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionSchema {
    pub name: String,
    pub description: String,
    pub parameters: Vec<ParamSchema>,
}

impl FunctionSchema {
    pub fn new(name: impl Into<String>, description: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            description: description.into(),
            parameters: Vec::new(),
        }
    }

    pub fn param(mut self, param: ParamSchema) -> Self {
        self.parameters.push(param);
        self
    }

    /// JSON-schema object describing the parameters.
    pub fn parameters_json(&self) -> Value {
        let mut properties = Map::new();
        for p in &self.parameters {
            let mut prop = json!({ "type": p.kind, "description": p.description });
            if let Some(items) = &p.items {
                prop["items"] = items.clone();
            }
            if !p.enum_values.is_empty() {
                prop["enum"] = json!(p.enum_values);
            }
            properties.insert(p.name.clone(), prop);
        }
        let required: Vec<&str> = self
            .parameters
            .iter()
            .filter(|p| p.required)
            .map(|p| p.name.as_str())
            .collect();
        json!({ "type": "object", "properties": properties, "required": required })
    }

    fn char_len(&self) -> usize {
        self.name.chars().count()
            + self.description.chars().count()
            + self
                .parameters
                .iter()
                .map(|p| p.name.chars().count() + p.description.chars().count())
                .sum::<usize>()
    }
}

pub fn schema_names_unique(schemas: &[FunctionSchema]) -> bool {
    let mut seen = HashSet::new();
    schemas.iter().all(|s| seen.insert(s.name.as_str()))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt: u64,
    pub completion: u64,
}

impl TokenUsage {
    pub fn new(prompt: u64, completion: u64) -> Self {
        Self { prompt, completion }
    }

    pub fn total(&self) -> u64 {
        self.prompt + self.completion
    }
}

/// Character count / 4, rounded up.
pub fn estimate_tokens_for_chars(chars: usize) -> u64 {
    chars.div_ceil(4) as u64
}

pub fn estimate_tokens(text: &str) -> u64 {
    estimate_tokens_for_chars(text.chars().count())
}

/// Proxy usage for a request/reply pair.
pub fn estimate_usage(dialogue: &[Message], schemas: &[FunctionSchema], reply: &ReplyBody) -> TokenUsage {
    let prompt_chars: usize = dialogue.iter().map(Message::char_len).sum::<usize>()
        + schemas.iter().map(FunctionSchema::char_len).sum::<usize>();
    let reply_chars = match reply {
        ReplyBody::Text(t) => t.chars().count(),
        ReplyBody::Call(c) => {
            c.name.chars().count() + Value::Object(c.arguments.clone()).to_string().chars().count()
        }
    };
    TokenUsage::new(
        estimate_tokens_for_chars(prompt_chars),
        estimate_tokens_for_chars(reply_chars),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReplyBody {
    Call(FunctionCallRequest),
    Text(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelReply {
    pub body: ReplyBody,
    /// Optional reasoning text accompanying a call.
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub thought: String,
    pub usage: TokenUsage,
}

impl ModelReply {
    pub fn call(&self) -> Option<&FunctionCallRequest> {
        match &self.body {
            ReplyBody::Call(c) => Some(c),
            ReplyBody::Text(_) => None,
        }
    }

    pub fn text(&self) -> Option<&str> {
        match &self.body {
            ReplyBody::Text(t) => Some(t),
            ReplyBody::Call(_) => None,
        }
    }

    pub fn into_message(self) -> Message {
        match self.body {
            ReplyBody::Call(call) => Message::assistant_call(self.thought, call),
            ReplyBody::Text(text) => Message::assistant(text),
        }
    }
}

/// Shared token meter. Updates are atomic so one meter may be charged by
/// concurrently running agents.
#[derive(Debug)]
pub struct BudgetMeter {
    limit: u64,
    used: AtomicU64,
    calls: AtomicU64,
}

impl BudgetMeter {
    pub fn new(limit: u64) -> Self {
        Self {
            limit,
            used: AtomicU64::new(0),
            calls: AtomicU64::new(0),
        }
    }

    pub fn limit(&self) -> u64 {
        self.limit
    }

    pub fn used(&self) -> u64 {
        self.used.load(Ordering::SeqCst)
    }

    pub fn model_calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn remaining(&self) -> u64 {
        self.limit.saturating_sub(self.used())
    }

    pub fn is_exhausted(&self) -> bool {
        self.used() >= self.limit
    }

    pub fn check(&self) -> Result<()> {
        let used = self.used();
        if used >= self.limit {
            return Err(Error::BudgetExhausted {
                used,
                limit: self.limit,
            });
        }
        Ok(())
    }

    pub fn charge(&self, usage: TokenUsage) {
        self.used.fetch_add(usage.total(), Ordering::SeqCst);
        self.calls.fetch_add(1, Ordering::SeqCst);
    }
}

impl Default for BudgetMeter {
    fn default() -> Self {
        Self::new(DEFAULT_TOKEN_BUDGET)
    }
}

pub trait ChatBackend: Send + Sync {
    /// One model turn. Budget accounting is done by [`chat`].
    fn complete(&self, dialogue: &[Message], schemas: &[FunctionSchema]) -> Result<ModelReply>;
}

impl<B: ChatBackend + ?Sized> ChatBackend for std::sync::Arc<B> {
    fn complete(&self, dialogue: &[Message], schemas: &[FunctionSchema]) -> Result<ModelReply> {
        (**self).complete(dialogue, schemas)
    }
}

/// One metered model turn. Fails with [`Error::BudgetExhausted`] when the
/// meter is already at its limit; otherwise the reply's usage is charged.
pub fn chat(
    backend: &dyn ChatBackend,
    dialogue: &[Message],
    schemas: &[FunctionSchema],
    meter: &BudgetMeter,
) -> Result<ModelReply> {
    meter.check()?;
    let reply = backend.complete(dialogue, schemas)?;
    meter.charge(reply.usage);
    Ok(reply)
}

/// Appends `reply` (and, for calls, its function result) to `dialogue`.
/// Unknown functions and malformed arguments are answered with error
/// results without reaching the dispatcher. Returns the result text when
/// the reply was a call.
pub fn apply_reply(
    dialogue: &mut Vec<Message>,
    reply: &ModelReply,
    schemas: &[FunctionSchema],
    dispatcher: &mut dyn FnMut(&FunctionCallRequest) -> String,
) -> Option<String> {
    dialogue.push(reply.clone().into_message());
    let call = reply.call()?;
    let result = if let Some(raw) = &call.malformed_arguments {
        format!("error: malformed arguments for {}: {raw}", call.name)
    } else if !schemas.iter().any(|s| s.name == call.name) {
        format!("function {} does not exist", call.name)
    } else {
        dispatcher(call)
    };
    dialogue.push(Message::function_result(&call.name, &result));
    Some(result)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "reason", content = "detail")]
pub enum LoopStop {
    /// The stop predicate fired; carries its label.
    Stopped(String),
    /// The model answered with text instead of a call.
    Text,
    MaxIterations,
    Budget,
    Cancelled,
    Error(String),
}

impl std::fmt::Display for LoopStop {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LoopStop::Stopped(label) => write!(f, "{label}"),
            LoopStop::Text => write!(f, "text reply"),
            LoopStop::MaxIterations => write!(f, "max iterations"),
            LoopStop::Budget => write!(f, "budget"),
            LoopStop::Cancelled => write!(f, "cancelled"),
            LoopStop::Error(e) => write!(f, "error: {e}"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LoopOptions<'a> {
    pub max_iterations: usize,
    pub cancel: Option<&'a AtomicBool>,
}

impl Default for LoopOptions<'_> {
    fn default() -> Self {
        Self {
            max_iterations: DEFAULT_MAX_ITERATIONS,
            cancel: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LoopOutcome {
    pub dialogue: Vec<Message>,
    pub stop: LoopStop,
    pub iterations: usize,
    pub usage: TokenUsage,
}

/// Repeats model turn → dispatch → feed back until `stop` returns a label,
/// the model replies with text, the iteration guard trips, the budget runs
/// out, or `cancel` is raised.
pub fn run_function_loop(
    backend: &dyn ChatBackend,
    seed: Vec<Message>,
    schemas: &[FunctionSchema],
    mut dispatcher: impl FnMut(&FunctionCallRequest) -> String,
    mut stop: impl FnMut(&ModelReply, &[Message]) -> Option<String>,
    meter: &BudgetMeter,
    options: LoopOptions<'_>,
) -> Result<LoopOutcome> {
    if schemas.is_empty() {
        return Err(Error::Contract("function loop needs at least one schema".into()));
    }
    let mut dialogue = seed;
    let mut usage = TokenUsage::default();
    let mut iterations = 0;
    let stop_reason = loop {
        if options.cancel.is_some_and(|c| c.load(Ordering::SeqCst)) {
            break LoopStop::Cancelled;
        }
        if iterations >= options.max_iterations {
            break LoopStop::MaxIterations;
        }
        let reply = match chat(backend, &dialogue, schemas, meter) {
            Ok(reply) => reply,
            Err(e) if e.is_budget() => break LoopStop::Budget,
            Err(e) => break LoopStop::Error(e.to_string()),
        };
        iterations += 1;
        usage.prompt += reply.usage.prompt;
        usage.completion += reply.usage.completion;
        let called = apply_reply(&mut dialogue, &reply, schemas, &mut dispatcher).is_some();
        if let Some(label) = stop(&reply, &dialogue) {
            break LoopStop::Stopped(label);
        }
        if !called {
            break LoopStop::Text;
        }
    };
    Ok(LoopOutcome {
        dialogue,
        stop: stop_reason,
        iterations,
        usage,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schemas() -> Vec<FunctionSchema> {
        vec![
            FunctionSchema::new("lookup", "look something up"),
            FunctionSchema::new("finish", "finish"),
        ]
    }

    fn three_step_backend() -> ScriptedBackend {
        ScriptedBackend::new(vec![
            Rule::call(Condition::called("second"), "finish", json!({"answer": "done"})),
            Rule::call(Condition::called("lookup"), "second", json!({})),
            Rule::call(Condition::always(), "lookup", json!({"q": "x"})),
        ])
        .unwrap()
    }

    fn finish_stop(reply: &ModelReply, _: &[Message]) -> Option<String> {
        reply
            .call()
            .filter(|c| c.name == "finish")
            .map(|_| "finish".to_string())
    }

    #[test]
    fn three_step_script_ends_on_finish() {
        let mut schemas = schemas();
        schemas.push(FunctionSchema::new("second", "second step"));
        let seed = vec![Message::system("sys"), Message::user("go")];
        let meter = BudgetMeter::default();
        let out = run_function_loop(
            &three_step_backend(),
            seed.clone(),
            &schemas,
            |c| format!("ok {}", c.name),
            finish_stop,
            &meter,
            LoopOptions::default(),
        )
        .unwrap();
        // Hand replay: lookup+result, second+result, finish+result.
        assert_eq!(out.dialogue.len(), seed.len() + 6);
        assert_eq!(out.stop, LoopStop::Stopped("finish".into()));
        assert!(calls_are_paired(&out.dialogue));
        assert_eq!(meter.used(), out.usage.total());
        assert_eq!(meter.model_calls(), 3);
    }

    #[test]
    fn endless_script_trips_guard() {
        let backend =
            ScriptedBackend::new(vec![Rule::call(Condition::always(), "lookup", json!({}))]).unwrap();
        let meter = BudgetMeter::default();
        let out = run_function_loop(
            &backend,
            vec![Message::user("go")],
            &schemas(),
            |_| "again".into(),
            |_, _| None,
            &meter,
            LoopOptions::default(),
        )
        .unwrap();
        assert_eq!(out.stop, LoopStop::MaxIterations);
        assert_eq!(out.iterations, DEFAULT_MAX_ITERATIONS);
    }

    #[test]
    fn dispatcher_errors_are_visible_to_the_model() {
        let backend = ScriptedBackend::new(vec![
            Rule::text(Condition::last_message_contains("error: boom"), "saw the error"),
            Rule::call(Condition::always(), "lookup", json!({})),
        ])
        .unwrap();
        let out = run_function_loop(
            &backend,
            vec![Message::user("go")],
            &schemas(),
            |_| "error: boom".into(),
            |_, _| None,
            &BudgetMeter::default(),
            LoopOptions::default(),
        )
        .unwrap();
        assert_eq!(out.stop, LoopStop::Text);
        assert_eq!(out.dialogue.last().unwrap().content, "saw the error");
    }

    #[test]
    fn unknown_function_is_reported_not_fatal() {
        let backend = ScriptedBackend::new(vec![
            Rule::text(Condition::last_message_contains("does not exist"), "ok"),
            Rule::call(Condition::always(), "imaginary", json!({})),
        ])
        .unwrap();
        let mut dispatched = 0;
        let out = run_function_loop(
            &backend,
            vec![Message::user("go")],
            &schemas(),
            |_| {
                dispatched += 1;
                String::new()
            },
            |_, _| None,
            &BudgetMeter::default(),
            LoopOptions::default(),
        )
        .unwrap();
        assert_eq!(dispatched, 0);
        assert_eq!(out.dialogue[2].content, "function imaginary does not exist");
    }

    #[test]
    fn malformed_arguments_are_echoed_back() {
        let backend = ScriptedBackend::new(vec![
            Rule::text(Condition::last_message_contains("malformed"), "fixed"),
            Rule::new(
                Condition::always(),
                ScriptedReply::Call(FunctionCallRequest::new("lookup", json!("{oops"))),
            ),
        ])
        .unwrap();
        let out = run_function_loop(
            &backend,
            vec![Message::user("go")],
            &schemas(),
            |_| unreachable!(),
            |_, _| None,
            &BudgetMeter::default(),
            LoopOptions::default(),
        )
        .unwrap();
        assert!(out.dialogue[2].content.starts_with("error: malformed arguments for lookup"));
    }

    #[test]
    fn exhausted_meter_refuses_chat() {
        let meter = BudgetMeter::new(10);
        meter.charge(TokenUsage::new(10, 0));
        let err = chat(&three_step_backend(), &[Message::user("x")], &schemas(), &meter).unwrap_err();
        assert!(err.is_budget());
    }

    #[test]
    fn budget_overshoot_is_at_most_one_reply() {
        let backend = ScriptedBackend::new(vec![Rule::call(Condition::always(), "lookup", json!({}))
            .with_usage(TokenUsage::new(250, 50))])
        .unwrap();
        let meter = BudgetMeter::new(1000);
        let out = run_function_loop(
            &backend,
            vec![Message::user("go")],
            &schemas(),
            |_| "r".into(),
            |_, _| None,
            &meter,
            LoopOptions::default(),
        )
        .unwrap();
        assert_eq!(out.stop, LoopStop::Budget);
        // 0, 300, 600, 900 are below the limit; the fourth reply lands on 1200.
        assert_eq!(meter.used(), 1200);
        assert!(meter.used() - meter.limit() <= 300);
    }

    #[test]
    fn empty_schema_list_is_rejected() {
        let err = run_function_loop(
            &three_step_backend(),
            vec![],
            &[],
            |_| String::new(),
            |_, _| None,
            &BudgetMeter::default(),
            LoopOptions::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn token_proxy_rounds_up() {
        assert_eq!(estimate_tokens(""), 0);
        assert_eq!(estimate_tokens("abcd"), 1);
        assert_eq!(estimate_tokens("abcde"), 2);
        assert_eq!(estimate_tokens("ééééé"), 2);
    }

    #[test]
    fn pairing_detects_orphans() {
        let call = FunctionCallRequest::new("f", json!({}));
        assert!(calls_are_paired(&[
            Message::assistant_call("", call.clone()),
            Message::function_result("f", "r"),
        ]));
        assert!(!calls_are_paired(&[Message::assistant_call("", call.clone())]));
        assert!(!calls_are_paired(&[Message::function_result("f", "r")]));
        assert!(!calls_are_paired(&[
            Message::assistant_call("", call),
            Message::function_result("g", "r"),
        ]));
    }

    #[test]
    fn replay_is_bit_identical() {
        let run = || {
            let mut schemas = schemas();
            schemas.push(FunctionSchema::new("second", ""));
            run_function_loop(
                &three_step_backend(),
                vec![Message::user("go")],
                &schemas,
                |c| format!("r:{}", c.name),
                finish_stop,
                &BudgetMeter::default(),
                LoopOptions::default(),
            )
            .unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(
            serde_json::to_string(&a.dialogue).unwrap(),
            serde_json::to_string(&b.dialogue).unwrap()
        );
    }
}
