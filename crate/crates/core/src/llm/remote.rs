//! OpenAI-compatible `chat/completions` backend with tool calls.

use std::time::Duration;

use reqwest::blocking::Client;
use serde::Deserialize;
use serde_json::{json, Map, Value};

use super::{
    estimate_usage, ChatBackend, FunctionCallRequest, FunctionSchema, Message, ModelReply,
    ReplyBody, Role, TokenUsage,
};
use crate::error::{Error, Result};
use crate::http::{self, RetryPolicy};

#[derive(Debug, Clone)]
pub struct RemoteConfig {
    /// Base URL (`https://host/v1`) or the full `.../chat/completions` URL.
    pub endpoint: String,
    pub model: String,
    pub api_key: Option<String>,
    pub temperature: Option<f64>,
    pub seed: Option<u64>,
    pub timeout: Duration,
    pub retry: RetryPolicy,
}

impl RemoteConfig {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            model: model.into(),
            api_key: None,
            temperature: None,
            seed: None,
            timeout: Duration::from_secs(120),
            retry: RetryPolicy::default(),
        }
    }

    pub fn completions_url(&self) -> String {
        let base = self.endpoint.trim_end_matches('/');
        if base.ends_with("/chat/completions") {
            base.to_string()
        } else {
            format!("{base}/chat/completions")
        }
    }
}

#[derive(Debug)]
pub struct RemoteBackend {
    config: RemoteConfig,
    client: Client,
}

impl RemoteBackend {
    pub fn new(config: RemoteConfig) -> Result<Self> {
        let client = Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| Error::Config(format!("building HTTP client: {e}")))?;
        Ok(Self { config, client })
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.config
    }

    /// Request body for one turn. Tool-call ids are derived from message
    /// positions so identical dialogues produce identical requests.
    pub fn request_body(&self, dialogue: &[Message], schemas: &[FunctionSchema]) -> Value {
        let mut messages = Vec::with_capacity(dialogue.len());
        let mut pending: Option<String> = None;
        for (i, m) in dialogue.iter().enumerate() {
            let wire = match m.role {
                Role::System => json!({"role": "system", "content": m.content}),
                Role::User => json!({"role": "user", "content": m.content}),
                Role::Assistant => match &m.call {
                    Some(call) => {
                        let id = format!("call_{i}");
                        pending = Some(id.clone());
                        let content = if m.content.is_empty() {
                            Value::Null
                        } else {
                            Value::String(m.content.clone())
                        };
                        json!({
                            "role": "assistant",
                            "content": content,
                            "tool_calls": [{
                                "id": id,
                                "type": "function",
                                "function": {
                                    "name": call.name,
                                    "arguments": call.malformed_arguments.clone().unwrap_or_else(
                                        || Value::Object(call.arguments.clone()).to_string()),
                                }
                            }]
                        })
                    }
                    None => json!({"role": "assistant", "content": m.content}),
                },
                Role::FunctionResult => match pending.take() {
                    Some(id) => json!({"role": "tool", "tool_call_id": id, "content": m.content}),
                    None => json!({
                        "role": "user",
                        "content": format!(
                            "[result of {}] {}",
                            m.call_result_for.as_deref().unwrap_or("function"),
                            m.content
                        ),
                    }),
                },
            };
            messages.push(wire);
        }
        let mut body = json!({ "model": self.config.model, "messages": messages });
        if !schemas.is_empty() {
            body["tools"] = schemas
                .iter()
                .map(|s| {
                    json!({
                        "type": "function",
                        "function": {
                            "name": s.name,
                            "description": s.description,
                            "parameters": s.parameters_json(),
                        }
                    })
                })
                .collect();
        }
        if let Some(t) = self.config.temperature {
            body["temperature"] = json!(t);
        }
        if let Some(seed) = self.config.seed {
            body["seed"] = json!(seed);
        }
        body
    }
}

#[derive(Deserialize)]
struct CompletionResponse {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<WireUsage>,
}

#[derive(Deserialize)]
struct Choice {
    message: WireMessage,
}

#[derive(Deserialize)]
struct WireMessage {
    #[serde(default)]
    content: Option<String>,
    #[serde(default)]
    tool_calls: Vec<WireToolCall>,
}

#[derive(Deserialize)]
struct WireToolCall {
    function: WireFunction,
}

#[derive(Deserialize)]
struct WireFunction {
    name: String,
    #[serde(default)]
    arguments: String,
}

#[derive(Deserialize)]
struct WireUsage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

/// Decodes a completion body. Only the first tool call is used.
pub(crate) fn parse_completion(
    text: &str,
    dialogue: &[Message],
    schemas: &[FunctionSchema],
) -> Result<ModelReply> {
    let response: CompletionResponse = serde_json::from_str(text)
        .map_err(|e| Error::Protocol(format!("undecodable completion: {e}")))?;
    let choice = response
        .choices
        .into_iter()
        .next()
        .ok_or_else(|| Error::Protocol("completion has no choices".into()))?;
    let thought = choice.message.content.clone().unwrap_or_default();
    let (body, thought) = match choice.message.tool_calls.into_iter().next() {
        Some(tc) => {
            let raw = tc.function.arguments;
            let call = match serde_json::from_str::<Value>(if raw.trim().is_empty() { "{}" } else { &raw }) {
                Ok(Value::Object(arguments)) => FunctionCallRequest {
                    name: tc.function.name,
                    arguments,
                    malformed_arguments: None,
                },
                _ => FunctionCallRequest {
                    name: tc.function.name,
                    arguments: Map::new(),
                    malformed_arguments: Some(raw),
                },
            };
            (ReplyBody::Call(call), thought)
        }
        None => match choice.message.content {
            Some(text) => (ReplyBody::Text(text), String::new()),
            None => {
                return Err(Error::Protocol(
                    "completion has neither content nor tool calls".into(),
                ))
            }
        },
    };
    let usage = match response.usage {
        Some(u) => TokenUsage::new(u.prompt_tokens, u.completion_tokens),
        None => estimate_usage(dialogue, schemas, &body),
    };
    Ok(ModelReply {
        body,
        thought,
        usage,
    })
}

impl ChatBackend for RemoteBackend {
    fn complete(&self, dialogue: &[Message], schemas: &[FunctionSchema]) -> Result<ModelReply> {
        let body = self.request_body(dialogue, schemas);
        let reply = http::post_json(
            &self.client,
            &self.config.completions_url(),
            self.config.api_key.as_deref(),
            &body,
            &self.config.retry,
        )
        .map_err(|f| Error::Transport {
            attempts: f.attempts,
            message: f.message,
        })?;
        if !(200..300).contains(&reply.status) {
            return Err(Error::Protocol(format!("HTTP {}: {}", reply.status, reply.body)));
        }
        parse_completion(&reply.body, dialogue, schemas)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::ParamSchema;

    fn backend() -> RemoteBackend {
        RemoteBackend::new(RemoteConfig::new("http://localhost:1/v1/", "gpt-test")).unwrap()
    }

    #[test]
    fn url_normalisation() {
        assert_eq!(
            RemoteConfig::new("http://h/v1/", "m").completions_url(),
            "http://h/v1/chat/completions"
        );
        assert_eq!(
            RemoteConfig::new("http://h/v1/chat/completions", "m").completions_url(),
            "http://h/v1/chat/completions"
        );
    }

    #[test]
    fn request_links_tool_results_to_calls() {
        let dialogue = vec![
            Message::system("s"),
            Message::user("q"),
            Message::assistant_call("", FunctionCallRequest::new("f", json!({"a": 1}))),
            Message::function_result("f", "r"),
        ];
        let schemas = vec![FunctionSchema::new("f", "does f")
            .param(ParamSchema::new("a", "number", true, "an a"))];
        let body = backend().request_body(&dialogue, &schemas);
        let msgs = body["messages"].as_array().unwrap();
        assert_eq!(msgs[2]["tool_calls"][0]["id"], "call_2");
        assert_eq!(msgs[2]["tool_calls"][0]["function"]["arguments"], "{\"a\":1}");
        assert_eq!(msgs[3]["role"], "tool");
        assert_eq!(msgs[3]["tool_call_id"], "call_2");
        let tool = &body["tools"][0]["function"];
        assert_eq!(tool["parameters"]["required"], json!(["a"]));
        assert_eq!(tool["parameters"]["properties"]["a"]["type"], "number");
    }

    #[test]
    fn parses_tool_call_and_usage() {
        let text = r#"{"choices":[{"message":{"content":"thinking","tool_calls":[
            {"id":"x","type":"function","function":{"name":"f","arguments":"{\"a\":2}"}}]}}],
            "usage":{"prompt_tokens":12,"completion_tokens":3}}"#;
        let reply = parse_completion(text, &[], &[]).unwrap();
        assert_eq!(reply.call().unwrap().arguments["a"], json!(2));
        assert_eq!(reply.thought, "thinking");
        assert_eq!(reply.usage, TokenUsage::new(12, 3));
    }

    #[test]
    fn malformed_arguments_are_kept_raw() {
        let text = r#"{"choices":[{"message":{"tool_calls":[
            {"function":{"name":"f","arguments":"{not json"}}]}}]}"#;
        let reply = parse_completion(text, &[], &[]).unwrap();
        assert_eq!(reply.call().unwrap().malformed_arguments.as_deref(), Some("{not json"));
    }

    #[test]
    fn protocol_errors() {
        assert!(matches!(parse_completion("nope", &[], &[]), Err(Error::Protocol(_))));
        assert!(matches!(parse_completion(r#"{"choices":[]}"#, &[], &[]), Err(Error::Protocol(_))));
        assert!(matches!(
            parse_completion(r#"{"choices":[{"message":{}}]}"#, &[], &[]),
            Err(Error::Protocol(_))
        ));
    }
}
