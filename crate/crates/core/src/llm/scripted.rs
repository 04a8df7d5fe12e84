//! Deterministic rule-based stand-in for a function-calling model.
//!
//! Rules are tried in order and the first whose condition holds produces
//! the reply. Conditions only look at the request (dialogue and offered
//! schema names), so the backend is pure and safe to share between threads.

use std::path::Path;

use serde::Deserialize;
use serde_json::{Map, Value};

use super::{
    estimate_usage, ChatBackend, FunctionCallRequest, FunctionSchema, Message, ModelReply,
    ReplyBody, Role, TokenUsage,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Condition {
    #[serde(default)]
    pub always: bool,
    #[serde(default)]
    pub last_message_contains: Option<String>,
    #[serde(default, deserialize_with = "one_or_many")]
    pub schemas_include: Vec<String>,
    #[serde(default, deserialize_with = "one_or_many")]
    pub dialogue_contains: Vec<String>,
    #[serde(default, deserialize_with = "one_or_many")]
    pub dialogue_lacks: Vec<String>,
    #[serde(default)]
    pub first_message_contains: Option<String>,
    /// Functions that must each appear as an assistant call.
    #[serde(default, deserialize_with = "one_or_many")]
    pub called: Vec<String>,
    #[serde(default, deserialize_with = "one_or_many")]
    pub not_called: Vec<String>,
    #[serde(default)]
    pub last_role: Option<Role>,
}

fn one_or_many<'de, D>(de: D) -> std::result::Result<Vec<String>, D::Error>
where
    D: serde::Deserializer<'de>,
{
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany {
        One(String),
        Many(Vec<String>),
    }
    Ok(match OneOrMany::deserialize(de)? {
        OneOrMany::One(s) => vec![s],
        OneOrMany::Many(v) => v,
    })
}

impl Condition {
    pub fn always() -> Self {
        Self {
            always: true,
            ..Self::default()
        }
    }

    pub fn last_message_contains(text: impl Into<String>) -> Self {
        Self {
            last_message_contains: Some(text.into()),
            ..Self::default()
        }
    }

    pub fn schemas_include(name: impl Into<String>) -> Self {
        Self {
            schemas_include: vec![name.into()],
            ..Self::default()
        }
    }

    pub fn called(name: impl Into<String>) -> Self {
        Self {
            called: vec![name.into()],
            ..Self::default()
        }
    }

    pub fn and_last_contains(mut self, text: impl Into<String>) -> Self {
        self.last_message_contains = Some(text.into());
        self
    }

    pub fn and_schema(mut self, name: impl Into<String>) -> Self {
        self.schemas_include.push(name.into());
        self
    }

    pub fn and_contains(mut self, text: impl Into<String>) -> Self {
        self.dialogue_contains.push(text.into());
        self
    }

    pub fn and_lacks(mut self, text: impl Into<String>) -> Self {
        self.dialogue_lacks.push(text.into());
        self
    }

    pub fn and_first_contains(mut self, text: impl Into<String>) -> Self {
        self.first_message_contains = Some(text.into());
        self
    }

    pub fn and_called(mut self, name: impl Into<String>) -> Self {
        self.called.push(name.into());
        self
    }

    pub fn and_not_called(mut self, name: impl Into<String>) -> Self {
        self.not_called.push(name.into());
        self
    }

    pub fn and_last_role(mut self, role: Role) -> Self {
        self.last_role = Some(role);
        self
    }

    fn has_predicates(&self) -> bool {
        self.last_message_contains.is_some()
            || !self.schemas_include.is_empty()
            || !self.dialogue_contains.is_empty()
            || !self.dialogue_lacks.is_empty()
            || self.first_message_contains.is_some()
            || !self.called.is_empty()
            || !self.not_called.is_empty()
            || self.last_role.is_some()
    }

    pub fn matches(&self, dialogue: &[Message], schemas: &[FunctionSchema]) -> bool {
        if self.always {
            return true;
        }
        let texts: Vec<String> = dialogue.iter().map(Message::match_text).collect();
        let was_called = |name: &str| {
            dialogue
                .iter()
                .any(|m| m.call.as_ref().is_some_and(|c| c.name == name))
        };
        if let Some(needle) = &self.last_message_contains {
            if !texts.last().is_some_and(|t| t.contains(needle.as_str())) {
                return false;
            }
        }
        if let Some(needle) = &self.first_message_contains {
            if !texts.first().is_some_and(|t| t.contains(needle.as_str())) {
                return false;
            }
        }
        if let Some(role) = self.last_role {
            if dialogue.last().map(|m| m.role) != Some(role) {
                return false;
            }
        }
        self.schemas_include
            .iter()
            .all(|name| schemas.iter().any(|s| &s.name == name))
            && self
                .dialogue_contains
                .iter()
                .all(|n| texts.iter().any(|t| t.contains(n.as_str())))
            && self
                .dialogue_lacks
                .iter()
                .all(|n| !texts.iter().any(|t| t.contains(n.as_str())))
            && self.called.iter().all(|n| was_called(n))
            && self.not_called.iter().all(|n| !was_called(n))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ScriptedReply {
    Call(FunctionCallRequest),
    Text(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rule {
    pub when: Condition,
    pub reply: ScriptedReply,
    pub thought: String,
    /// Fixed usage; when absent the character proxy is used.
    pub usage: Option<TokenUsage>,
}

impl Rule {
    pub fn new(when: Condition, reply: ScriptedReply) -> Self {
        Self {
            when,
            reply,
            thought: String::new(),
            usage: None,
        }
    }

    pub fn call(when: Condition, name: &str, args: Value) -> Self {
        Self::new(when, ScriptedReply::Call(FunctionCallRequest::new(name, args)))
    }

    pub fn text(when: Condition, text: &str) -> Self {
        Self::new(when, ScriptedReply::Text(text.to_string()))
    }

    pub fn with_usage(mut self, usage: TokenUsage) -> Self {
        self.usage = Some(usage);
        self
    }
}

// --- scenario file ---

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioDoc {
    rules: Vec<RuleDoc>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RuleDoc {
    when: Condition,
    reply: ReplyDoc,
    #[serde(default)]
    usage: Option<UsageDoc>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ReplyDoc {
    #[serde(default)]
    call: Option<CallDoc>,
    #[serde(default)]
    text: Option<String>,
    #[serde(default)]
    thought: Option<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CallDoc {
    name: String,
    #[serde(default)]
    args: Option<Map<String, Value>>,
    /// Raw argument text, for exercising malformed-argument handling.
    #[serde(default)]
    raw_args: Option<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct UsageDoc {
    prompt: u64,
    completion: u64,
}

#[derive(Debug, Clone)]
pub struct ScriptedBackend {
    rules: Vec<Rule>,
}

impl ScriptedBackend {
    /// Validates the rule list: only `always` conditions may be
    /// predicate-free, and at least one catch-all is required.
    pub fn new(rules: Vec<Rule>) -> Result<Self> {
        for (i, rule) in rules.iter().enumerate() {
            match (rule.when.always, rule.when.has_predicates()) {
                (true, true) => {
                    return Err(Error::Invalid(format!(
                        "rule {i}: `always` cannot be combined with other predicates"
                    )))
                }
                (false, false) => {
                    return Err(Error::Invalid(format!(
                        "rule {i}: empty condition (use `always` for a catch-all)"
                    )))
                }
                _ => {}
            }
        }
        if !rules.iter().any(|r| r.when.always) {
            return Err(Error::Invalid("scenario requires a catch-all `always` rule".into()));
        }
        Ok(Self { rules })
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let doc: ScenarioDoc = serde_json::from_str(text).map_err(Error::from_json)?;
        let mut rules = Vec::with_capacity(doc.rules.len());
        for (i, r) in doc.rules.into_iter().enumerate() {
            let reply = match (r.reply.call, r.reply.text) {
                (Some(call), None) => {
                    let request = match (call.args, call.raw_args) {
                        (_, Some(raw)) => match serde_json::from_str::<Value>(&raw) {
                            Ok(Value::Object(map)) => FunctionCallRequest {
                                name: call.name,
                                arguments: map,
                                malformed_arguments: None,
                            },
                            _ => FunctionCallRequest {
                                name: call.name,
                                arguments: Map::new(),
                                malformed_arguments: Some(raw),
                            },
                        },
                        (args, None) => FunctionCallRequest {
                            name: call.name,
                            arguments: args.unwrap_or_default(),
                            malformed_arguments: None,
                        },
                    };
                    ScriptedReply::Call(request)
                }
                (None, Some(text)) => ScriptedReply::Text(text),
                _ => {
                    return Err(Error::Invalid(format!(
                        "rule {i}: reply needs exactly one of `call` or `text`"
                    )))
                }
            };
            rules.push(Rule {
                when: r.when,
                reply,
                thought: r.reply.thought.unwrap_or_default(),
                usage: r.usage.map(|u| TokenUsage::new(u.prompt, u.completion)),
            });
        }
        Self::new(rules)
    }

    pub fn load_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }

    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }

    /// Index of the rule that fires for this request.
    pub fn matching_rule(&self, dialogue: &[Message], schemas: &[FunctionSchema]) -> usize {
        self.rules
            .iter()
            .position(|r| r.when.matches(dialogue, schemas))
            .expect("catch-all rule guarantees a match")
    }
}

impl ChatBackend for ScriptedBackend {
    fn complete(&self, dialogue: &[Message], schemas: &[FunctionSchema]) -> Result<ModelReply> {
        let rule = &self.rules[self.matching_rule(dialogue, schemas)];
        let body = match &rule.reply {
            ScriptedReply::Call(call) => ReplyBody::Call(call.clone()),
            ScriptedReply::Text(text) => ReplyBody::Text(text.clone()),
        };
        let usage = rule
            .usage
            .unwrap_or_else(|| estimate_usage(dialogue, schemas, &body));
        Ok(ModelReply {
            body,
            thought: rule.thought.clone(),
            usage,
        })
    }
}
