//! Minimal OpenAI-compatible chat-completions client.

use std::future::Future;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::Semaphore;

use super::prompt::PromptBundle;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum LlmError {
    #[error("request timed out")]
    Timeout,
    #[error("transport error: {0}")]
    Transport(String),
    #[error("HTTP {status}: {body}")]
    HttpStatus { status: u16, body: String },
    #[error("retries exhausted after {attempts} attempts; last status {status}: {body}")]
    RetryExhausted { attempts: u32, status: u16, body: String },
    #[error("unexpected response shape: {0}")]
    MalformedResponse(String),
    #[error("invalid endpoint configuration: {0}")]
    InvalidEndpoint(String),
}

impl LlmError {
    fn is_transient(&self) -> bool {
        match self {
            LlmError::Timeout | LlmError::Transport(_) => true,
            LlmError::HttpStatus { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelEndpoint {
    pub base_url: String,
    pub model_name: String,
    pub auth_token: Option<String>,
    pub timeout_secs: f64,
    pub max_parallel_requests: usize,
    /// Extra attempts after the first one for transient failures.
    pub retry_budget: u32,
}

impl Default for ModelEndpoint {
    fn default() -> Self {
        ModelEndpoint {
            base_url: "http://127.0.0.1:8000".to_string(),
            model_name: "default".to_string(),
            auth_token: None,
            timeout_secs: 30.0,
            max_parallel_requests: 4,
            retry_budget: 1,
        }
    }
}

impl ModelEndpoint {
    pub fn validate(&self) -> Result<(), LlmError> {
        if self.max_parallel_requests == 0 {
            return Err(LlmError::InvalidEndpoint(
                "max_parallel_requests must be at least 1".into(),
            ));
        }
        if !(self.timeout_secs > 0.0 && self.timeout_secs.is_finite()) {
            return Err(LlmError::InvalidEndpoint("timeout must be positive".into()));
        }
        if !(self.base_url.starts_with("http://") || self.base_url.starts_with("https://")) {
            return Err(LlmError::InvalidEndpoint(format!(
                "base_url {:?} is not http(s)",
                self.base_url
            )));
        }
        Ok(())
    }

    pub fn completions_url(&self) -> String {
        format!("{}/v1/chat/completions", self.base_url.trim_end_matches('/'))
    }
}

/// Anything that turns a prompt into assistant text.
pub trait CompletionBackend: Send + Sync {
    fn complete(&self, bundle: &PromptBundle) -> impl Future<Output = Result<String, LlmError>> + Send;
}

#[derive(Debug, Serialize)]
struct ChatMessage<'a> {
    role: &'static str,
    content: &'a str,
}

#[derive(Debug, Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: [ChatMessage<'a>; 2],
    temperature: f32,
    max_tokens: u32,
}

#[derive(Debug, Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Debug, Deserialize)]
struct Choice {
    message: ResponseMessage,
}

#[derive(Debug, Deserialize)]
struct ResponseMessage {
    #[serde(default)]
    content: Option<String>,
}

/// Request body for one prompt, as sent on the wire.
pub fn request_body(bundle: &PromptBundle) -> serde_json::Value {
    serde_json::to_value(ChatRequest {
        model: &bundle.decoding.model_name,
        messages: [
            ChatMessage {
                role: "system",
                content: bundle.system_text,
            },
            ChatMessage {
                role: "user",
                content: &bundle.user_text,
            },
        ],
        temperature: bundle.decoding.temperature,
        max_tokens: bundle.decoding.max_tokens,
    })
    .expect("request serializes")
}

#[derive(Debug, Clone)]
pub struct ChatClient {
    http: reqwest::Client,
    endpoint: ModelEndpoint,
    permits: Arc<Semaphore>,
}

impl ChatClient {
    pub fn new(endpoint: ModelEndpoint) -> Result<Self, LlmError> {
        endpoint.validate()?;
        let http = reqwest::Client::builder()
            .timeout(Duration::from_secs_f64(endpoint.timeout_secs))
            .build()
            .map_err(|e| LlmError::InvalidEndpoint(e.to_string()))?;
        Ok(ChatClient {
            http,
            permits: Arc::new(Semaphore::new(endpoint.max_parallel_requests)),
            endpoint,
        })
    }

    pub fn endpoint(&self) -> &ModelEndpoint {
        &self.endpoint
    }

    async fn attempt(&self, body: &serde_json::Value) -> Result<String, LlmError> {
        let mut req = self.http.post(self.endpoint.completions_url()).json(body);
        if let Some(token) = &self.endpoint.auth_token {
            req = req.bearer_auth(token);
        }
        let resp = req.send().await.map_err(classify)?;
        let status = resp.status();
        let text = resp.text().await.map_err(classify)?;
        if !status.is_success() {
            return Err(LlmError::HttpStatus {
                status: status.as_u16(),
                body: excerpt(&text),
            });
        }
        let parsed: ChatResponse =
            serde_json::from_str(&text).map_err(|e| LlmError::MalformedResponse(e.to_string()))?;
        parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| LlmError::MalformedResponse("no choices[0].message.content".into()))
    }

    /// Sends one chat-completion request, retrying transient failures up to the budget.
    pub async fn call_model(&self, bundle: &PromptBundle) -> Result<String, LlmError> {
        let body = request_body(bundle);
        let _permit = self.permits.acquire().await.expect("semaphore never closed");
        let attempts = self.endpoint.retry_budget + 1;
        let mut last = None;
        for _ in 0..attempts {
            match self.attempt(&body).await {
                Ok(text) => return Ok(text),
                Err(e) if e.is_transient() => last = Some(e),
                Err(e) => return Err(e),
            }
        }
        Err(match last.expect("at least one attempt") {
            LlmError::HttpStatus { status, body } => LlmError::RetryExhausted { attempts, status, body },
            other => other,
        })
    }
}

impl CompletionBackend for ChatClient {
    async fn complete(&self, bundle: &PromptBundle) -> Result<String, LlmError> {
        self.call_model(bundle).await
    }
}

fn classify(e: reqwest::Error) -> LlmError {
    if e.is_timeout() {
        LlmError::Timeout
    } else {
        LlmError::Transport(e.to_string())
    }
}

fn excerpt(body: &str) -> String {
    const MAX: usize = 200;
    match body.char_indices().nth(MAX) {
        Some((i, _)) => format!("{}…", &body[..i]),
        None => body.to_string(),
    }
}
