//! The remote backend against a local one-request-per-connection server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::mpsc;
use std::thread;
use std::time::Duration;

use serde_json::{json, Value};

use hiertool::http::RetryPolicy;
use hiertool::llm::{
    chat, BudgetMeter, ChatBackend, FunctionSchema, Message, ParamSchema, RemoteBackend, RemoteConfig,
};
use hiertool::Error;

struct Captured {
    head: String,
    body: Value,
}

/// Serves one canned `(status, body)` per connection, in order, and hands
/// every request back through the channel.
fn serve(replies: Vec<(u16, String)>) -> (String, mpsc::Receiver<Captured>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1", listener.local_addr().unwrap());
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        for (status, body) in replies {
            let (mut stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut head = String::new();
            let mut length = 0usize;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if line == "\r\n" || line.is_empty() {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    length = v.trim().parse().unwrap();
                }
                head.push_str(&line);
            }
            let mut raw = vec![0; length];
            reader.read_exact(&mut raw).unwrap();
            let _ = tx.send(Captured {
                head,
                body: serde_json::from_slice(&raw).unwrap_or(Value::Null),
            });
            let reply = format!(
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            );
            stream.write_all(reply.as_bytes()).unwrap();
        }
    });
    (url, rx)
}

fn backend(url: &str, key: Option<&str>) -> RemoteBackend {
    let mut config = RemoteConfig::new(url, "toy-model");
    config.api_key = key.map(str::to_string);
    config.temperature = Some(0.0);
    config.timeout = Duration::from_secs(5);
    config.retry = RetryPolicy {
        max_retries: 2,
        base_delay: Duration::from_millis(1),
    };
    RemoteBackend::new(config).unwrap()
}

fn tool_reply() -> String {
    json!({
        "choices": [{"message": {"role": "assistant", "content": null, "tool_calls": [{
            "id": "call_1", "type": "function",
            "function": {"name": "get_tools_in_category", "arguments": "{\"category_name\":\"Finance\"}"}}]}}],
        "usage": {"prompt_tokens": 120, "completion_tokens": 9}
    })
    .to_string()
}

fn schemas() -> Vec<FunctionSchema> {
    vec![FunctionSchema::new("get_tools_in_category", "list tools")
        .param(ParamSchema::new("category_name", "string", true, "category"))]
}

#[test]
fn tool_call_round_trip_with_bearer_token() {
    let (url, rx) = serve(vec![(200, tool_reply())]);
    let b = backend(&url, Some("test-secret"));
    let meter = BudgetMeter::new(1_000);
    let dialogue = vec![Message::system("s"), Message::user("which finance tools exist?")];
    let reply = chat(&b, &dialogue, &schemas(), &meter).unwrap();
    let call = reply.call().expect("a tool call");
    assert_eq!(call.name, "get_tools_in_category");
    assert_eq!(call.arg_str("category_name"), Some("Finance"));
    assert_eq!(meter.used(), 129);

    let req = rx.recv().unwrap();
    assert!(req.head.starts_with("POST /v1/chat/completions"), "{}", req.head);
    assert!(req.head.to_ascii_lowercase().contains("authorization: bearer test-secret"));
    assert_eq!(req.body["model"], "toy-model");
    assert_eq!(req.body["messages"].as_array().unwrap().len(), 2);
    assert_eq!(req.body["tools"][0]["function"]["name"], "get_tools_in_category");
}

#[test]
fn server_errors_are_retried() {
    let (url, rx) = serve(vec![(500, "{}".into()), (429, "{}".into()), (200, tool_reply())]);
    let b = backend(&url, None);
    let reply = b.complete(&[Message::user("hi")], &schemas()).unwrap();
    assert!(reply.call().is_some());
    let heads: Vec<String> = rx.try_iter().map(|c| c.head).collect();
    assert_eq!(heads.len(), 3);
    assert!(!heads[0].to_ascii_lowercase().contains("authorization"));
}

#[test]
fn persistent_failure_reports_attempts() {
    let (url, _rx) = serve(vec![(503, "{}".into()), (503, "{}".into()), (503, "{}".into())]);
    let err = backend(&url, None).complete(&[Message::user("hi")], &[]).unwrap_err();
    assert!(matches!(err, Error::Transport { attempts: 3, .. }), "{err:?}");
}

#[test]
fn client_errors_and_garbage_are_protocol_errors() {
    let (url, _rx) = serve(vec![(400, r#"{"error":"bad"}"#.into()), (200, "not json".into())]);
    let b = backend(&url, None);
    assert!(matches!(b.complete(&[Message::user("hi")], &[]), Err(Error::Protocol(_))));
    assert!(matches!(b.complete(&[Message::user("hi")], &[]), Err(Error::Protocol(_))));
}
