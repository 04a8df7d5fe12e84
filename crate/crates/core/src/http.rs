//! Blocking JSON-over-HTTP with bounded retries, shared by the remote chat
//! backend and the remote API executor.

use std::thread;
use std::time::Duration;

use reqwest::blocking::Client;
use reqwest::StatusCode;
use tracing::warn;

#[derive(Debug, Clone)]
pub struct RetryPolicy {
    /// Retries after the first attempt.
    pub max_retries: u32,
    /// Delay before the first retry; doubled on every further retry.
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            base_delay: Duration::from_millis(500),
        }
    }
}

impl RetryPolicy {
    pub fn delay_for(&self, retry: u32) -> Duration {
        self.base_delay.saturating_mul(1 << retry.min(16))
    }
}

#[derive(Debug, Clone)]
pub struct HttpReply {
    pub status: u16,
    pub body: String,
}

#[derive(Debug, Clone)]
pub struct TransportFailure {
    pub attempts: u32,
    pub message: String,
}

fn retryable(status: StatusCode) -> bool {
    status.is_server_error() || status == StatusCode::TOO_MANY_REQUESTS
}

/// POSTs `body` and returns the final reply. Connection failures, timeouts,
/// 5xx and 429 are retried; any other status is returned to the caller.
pub fn post_json(
    client: &Client,
    url: &str,
    bearer: Option<&str>,
    body: &serde_json::Value,
    policy: &RetryPolicy,
) -> Result<HttpReply, TransportFailure> {
    let mut attempt = 0u32;
    loop {
        attempt += 1;
        let mut request = client.post(url).json(body);
        if let Some(key) = bearer {
            request = request.bearer_auth(key);
        }
        let failure = match request.send() {
            Ok(response) => {
                let status = response.status();
                match response.text() {
                    Ok(text) if !retryable(status) => {
                        return Ok(HttpReply {
                            status: status.as_u16(),
                            body: text,
                        })
                    }
                    Ok(text) => format!("HTTP {}: {}", status.as_u16(), text),
                    Err(e) => format!("reading body: {e}"),
                }
            }
            Err(e) => e.to_string(),
        };
        if attempt > policy.max_retries {
            return Err(TransportFailure {
                attempts: attempt,
                message: failure,
            });
        }
        warn!(url, attempt, %failure, "request failed, retrying");
        thread::sleep(policy.delay_for(attempt - 1));
    }
}
