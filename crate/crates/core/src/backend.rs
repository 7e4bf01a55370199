//! Blocking client for OpenAI-compatible chat-completion endpoints.

use serde::{Deserialize, Serialize};
use std::time::Duration;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    #[error("backend unavailable after {attempts} attempt(s): {last_error}")]
    Unavailable { attempts: u32, last_error: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChatConfig {
    /// Base URL (`http://host:port/v1`) or the full `/chat/completions` endpoint.
    pub url: String,
    pub model: String,
    pub temperature: f64,
    /// Extra attempts after the first one.
    pub max_retries: u32,
    pub backoff_ms: u64,
    pub timeout_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key: Option<String>,
}

impl Default for ChatConfig {
    fn default() -> Self {
        ChatConfig {
            url: "http://127.0.0.1:8000/v1".into(),
            model: "judge".into(),
            temperature: 0.0,
            max_retries: 3,
            backoff_ms: 500,
            timeout_ms: 60_000,
            api_key: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage {
            role: "system".into(),
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage {
            role: "user".into(),
            content: content.into(),
        }
    }
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    temperature: f64,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChatMessage,
}

enum Failure {
    Retry(String),
    Fatal(String),
}

pub struct ChatClient {
    cfg: ChatConfig,
    endpoint: String,
    http: reqwest::blocking::Client,
}

impl ChatClient {
    pub fn new(cfg: ChatConfig) -> Result<ChatClient, BackendError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(cfg.timeout_ms))
            .build()
            .map_err(|e| BackendError::Unavailable {
                attempts: 0,
                last_error: e.to_string(),
            })?;
        let endpoint = if cfg.url.ends_with("/chat/completions") {
            cfg.url.clone()
        } else {
            format!("{}/chat/completions", cfg.url.trim_end_matches('/'))
        };
        Ok(ChatClient { cfg, endpoint, http })
    }

    pub fn config(&self) -> &ChatConfig {
        &self.cfg
    }

    pub fn complete(&self, messages: &[ChatMessage]) -> Result<String, BackendError> {
        self.complete_with(messages, |s| Ok(s.to_string()))
    }

    /// Sends the request and hands the reply to `accept`; transport errors,
    /// 429/5xx responses and rejected replies are retried with exponential
    /// backoff until the retry budget runs out.
    pub fn complete_with<T>(
        &self,
        messages: &[ChatMessage],
        accept: impl Fn(&str) -> Result<T, String>,
    ) -> Result<T, BackendError> {
        let mut delay = Duration::from_millis(self.cfg.backoff_ms);
        let mut attempts = 0;
        loop {
            attempts += 1;
            let failure = match self.send_once(messages) {
                Ok(text) => match accept(&text) {
                    Ok(v) => return Ok(v),
                    Err(e) => Failure::Retry(format!("rejected reply: {e}")),
                },
                Err(f) => f,
            };
            let last_error = match failure {
                Failure::Fatal(e) => return Err(BackendError::Unavailable { attempts, last_error: e }),
                Failure::Retry(e) => e,
            };
            if attempts > self.cfg.max_retries {
                return Err(BackendError::Unavailable { attempts, last_error });
            }
            tracing::warn!(attempt = attempts, error = %last_error, "chat request failed, retrying");
            std::thread::sleep(delay);
            delay = delay.saturating_mul(2);
        }
    }

    fn send_once(&self, messages: &[ChatMessage]) -> Result<String, Failure> {
        let body = ChatRequest {
            model: &self.cfg.model,
            messages,
            temperature: self.cfg.temperature,
        };
        let mut req = self.http.post(&self.endpoint).json(&body);
        if let Some(key) = &self.cfg.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| Failure::Retry(e.to_string()))?;
        let status = resp.status();
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(Failure::Retry(format!("HTTP {status}")));
        }
        if !status.is_success() {
            return Err(Failure::Fatal(format!("HTTP {status}")));
        }
        let parsed: ChatResponse = resp
            .json()
            .map_err(|e| Failure::Retry(format!("undecodable response body: {e}")))?;
        parsed
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| Failure::Retry("response has no choices".into()))
    }
}
