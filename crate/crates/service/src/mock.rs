//! A scripted OpenAI-compatible endpoint for offline runs and tests.
//!
//! Replies are keyed by note id. The user message of each request is matched
//! back to a note through its age-prefixed text.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use anyhow::Context;
use axum::extract::State;
use axum::http::StatusCode;
use axum::routing::post;
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::task::JoinHandle;

use vaxtract_core::llm::SYSTEM_PROMPT;
use vaxtract_core::Dataset;

/// One scripted reply. `fail_times` error responses precede the real answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockReply {
    pub id: String,
    pub content: String,
    #[serde(default)]
    pub delay_ms: u64,
    #[serde(default)]
    pub fail_times: usize,
    #[serde(default = "default_fail_status")]
    pub fail_status: u16,
}

fn default_fail_status() -> u16 {
    503
}

pub fn load_replies(path: &Path) -> anyhow::Result<Vec<MockReply>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).with_context(|| format!("{}:{}", path.display(), i + 1)))
        .collect()
}

struct Scripted {
    reply: MockReply,
    served: AtomicUsize,
}

#[derive(Clone)]
struct MockState {
    by_user_text: Arc<HashMap<String, Arc<Scripted>>>,
    requests: Arc<AtomicUsize>,
}

fn error(status: StatusCode, message: &str) -> (StatusCode, Json<Value>) {
    (status, Json(json!({"error": {"message": message}})))
}

async fn completions(State(s): State<MockState>, body: Option<Json<Value>>) -> (StatusCode, Json<Value>) {
    s.requests.fetch_add(1, Ordering::SeqCst);
    let Some(Json(body)) = body else {
        return error(StatusCode::BAD_REQUEST, "body must be JSON");
    };
    if body["messages"][0]["content"].as_str() != Some(SYSTEM_PROMPT) {
        return error(StatusCode::BAD_REQUEST, "unexpected system prompt");
    }
    let Some(user) = body["messages"][1]["content"].as_str() else {
        return error(StatusCode::BAD_REQUEST, "missing user message");
    };
    let Some(script) = s.by_user_text.get(user) else {
        return error(StatusCode::NOT_FOUND, "no scripted reply for this note");
    };
    let n = script.served.fetch_add(1, Ordering::SeqCst);
    tokio::time::sleep(Duration::from_millis(script.reply.delay_ms)).await;
    if n < script.reply.fail_times {
        let status = StatusCode::from_u16(script.reply.fail_status).unwrap_or(StatusCode::SERVICE_UNAVAILABLE);
        return error(status, "scripted failure");
    }
    let model = body["model"].clone();
    (
        StatusCode::OK,
        Json(json!({
            "id": format!("mock-{}", script.reply.id),
            "object": "chat.completion",
            "model": model,
            "choices": [{
                "index": 0,
                "message": {"role": "assistant", "content": script.reply.content},
                "finish_reason": "stop"
            }]
        })),
    )
}

pub struct MockServer {
    pub addr: SocketAddr,
    requests: Arc<AtomicUsize>,
    handle: JoinHandle<()>,
}

impl MockServer {
    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn requests(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }

    pub async fn wait(mut self) {
        let _ = (&mut self.handle).await;
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.handle.abort();
    }
}

pub fn mock_router(notes: &Dataset, replies: Vec<MockReply>) -> anyhow::Result<(Router, Arc<AtomicUsize>)> {
    let by_id: HashMap<&str, String> = notes
        .notes
        .iter()
        .map(|n| (n.id.as_str(), n.age_prefixed_text()))
        .collect();
    let mut by_user_text = HashMap::new();
    for reply in replies {
        let text = by_id
            .get(reply.id.as_str())
            .with_context(|| format!("reply for unknown note id {:?}", reply.id))?
            .clone();
        by_user_text.insert(
            text,
            Arc::new(Scripted {
                reply,
                served: AtomicUsize::new(0),
            }),
        );
    }
    let requests = Arc::new(AtomicUsize::new(0));
    let state = MockState {
        by_user_text: Arc::new(by_user_text),
        requests: requests.clone(),
    };
    let router = Router::new()
        .route("/v1/chat/completions", post(completions))
        .with_state(state);
    Ok((router, requests))
}

/// Binds and serves in the background.
pub async fn spawn(notes: &Dataset, replies: Vec<MockReply>, listen: SocketAddr) -> anyhow::Result<MockServer> {
    let (router, requests) = mock_router(notes, replies)?;
    let listener = tokio::net::TcpListener::bind(listen)
        .await
        .with_context(|| format!("binding {listen}"))?;
    let addr = listener.local_addr()?;
    let handle = tokio::spawn(async move {
        let _ = axum::serve(listener, router).await;
    });
    Ok(MockServer { addr, requests, handle })
}
