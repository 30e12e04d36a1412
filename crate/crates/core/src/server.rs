//! HTTP front end: `POST /chat` and `GET /healthz`.
//!
//! The index and pipeline are loaded before the server starts and shared
//! read-only. At most `max_in_flight` pipeline runs execute at once; up to
//! `queue_depth` more requests wait for a slot and anything beyond that is
//! turned away with 429.

use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Instant;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{header, HeaderMap, HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tokio::sync::Semaphore;
use tower_http::cors::{AllowOrigin, CorsLayer};

use crate::config::ServerConfig;
use crate::rag::{LlmError, RagError, RagPipeline};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatRequest {
    /// Opaque client id, echoed back. The server keeps no conversation state.
    #[serde(default)]
    pub session_id: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Source {
    pub doc_id: String,
    pub similarity: f64,
    pub snippet: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub answer: String,
    pub sources: Vec<Source>,
    pub latency_ms: u64,
    pub request_id: String,
    pub session_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
    pub request_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub index_version: Option<u64>,
    pub doc_count: usize,
}

pub struct ServerState {
    pipeline: Option<RagPipeline>,
    config: ServerConfig,
    slots: Semaphore,
    waiting: AtomicUsize,
    request_prefix: String,
    counter: AtomicU64,
}

impl ServerState {
    /// `pipeline` is `None` when no index is loaded; chat then answers 503.
    pub fn new(pipeline: Option<RagPipeline>, config: ServerConfig) -> Self {
        let slots = Semaphore::new(config.max_in_flight.max(1));
        ServerState {
            pipeline,
            config,
            slots,
            waiting: AtomicUsize::new(0),
            request_prefix: format!("{:08x}", rand::random::<u32>()),
            counter: AtomicU64::new(0),
        }
    }

    pub fn pipeline(&self) -> Option<&RagPipeline> {
        self.pipeline.as_ref()
    }

    fn next_request_id(&self) -> String {
        format!("req-{}-{:06}", self.request_prefix, self.counter.fetch_add(1, Ordering::Relaxed) + 1)
    }
}

pub fn router(state: Arc<ServerState>) -> Router {
    let mut app = Router::new()
        .route("/chat", post(chat))
        .route("/healthz", get(healthz));
    let origins: Vec<HeaderValue> = state
        .config
        .cors_origins
        .iter()
        .filter_map(|o| HeaderValue::from_str(o).ok())
        .collect();
    if !origins.is_empty() {
        app = app.layer(
            CorsLayer::new()
                .allow_origin(AllowOrigin::list(origins))
                .allow_methods([Method::GET, Method::POST])
                .allow_headers([header::CONTENT_TYPE]),
        );
    }
    app.with_state(state)
}

/// Serve on `listener` until `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    state: Arc<ServerState>,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(state))
        .with_graceful_shutdown(shutdown)
        .await
}

async fn healthz(State(state): State<Arc<ServerState>>) -> Response {
    match &state.pipeline {
        Some(p) => (
            StatusCode::OK,
            Json(Health {
                status: "ok".into(),
                index_version: Some(p.index().version()),
                doc_count: p.index().len(),
            }),
        )
            .into_response(),
        None => (
            StatusCode::SERVICE_UNAVAILABLE,
            Json(Health {
                status: "unavailable".into(),
                index_version: None,
                doc_count: 0,
            }),
        )
            .into_response(),
    }
}

struct Failure {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl Failure {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Failure {
            status,
            code,
            message: message.into(),
        }
    }
}

fn is_json(headers: &HeaderMap) -> bool {
    headers
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.split(';').next())
        .is_some_and(|mime| {
            let mime = mime.trim().to_ascii_lowercase();
            mime == "application/json" || mime.ends_with("+json")
        })
}

fn snippet(text: &str, limit: usize) -> String {
    if text.chars().count() <= limit {
        return text.to_string();
    }
    let mut s: String = text.chars().take(limit.saturating_sub(1)).collect();
    s.push('…');
    s
}

fn rag_failure(err: RagError) -> Failure {
    match &err {
        RagError::Validation(m) => Failure::new(StatusCode::BAD_REQUEST, "invalid_request", m.clone()),
        RagError::Llm(LlmError::PromptTooLong { .. }) => {
            Failure::new(StatusCode::UNPROCESSABLE_ENTITY, "prompt_too_long", err.to_string())
        }
        RagError::Llm(_) => Failure::new(StatusCode::BAD_GATEWAY, "llm_failed", err.to_string()),
        RagError::Embed(_) => Failure::new(StatusCode::BAD_GATEWAY, "embedding_failed", err.to_string()),
        RagError::Search(_) | RagError::Template(_) => {
            Failure::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", err.to_string())
        }
    }
}

async fn chat(State(state): State<Arc<ServerState>>, headers: HeaderMap, body: Bytes) -> Response {
    let started = Instant::now();
    let request_id = state.next_request_id();
    let result = handle_chat(&state, &headers, &body, &request_id, started).await;
    let latency_ms = started.elapsed().as_millis() as u64;
    let llm = state.pipeline.as_ref().map_or("none", |p| p.llm().kind().as_str());
    match result {
        Ok((response, hits)) => {
            tracing::info!(
                request_id = %request_id,
                status = 200u16,
                latency_ms,
                hits,
                llm,
                "chat"
            );
            if state.config.log_bodies {
                tracing::debug!(request_id = %request_id, answer = %response.answer, "chat body");
            }
            (StatusCode::OK, Json(response)).into_response()
        }
        Err(f) => {
            tracing::info!(
                request_id = %request_id,
                status = f.status.as_u16(),
                latency_ms,
                hits = 0usize,
                llm,
                code = f.code,
                "chat"
            );
            (
                f.status,
                Json(ErrorBody {
                    code: f.code.to_string(),
                    message: f.message,
                    request_id,
                }),
            )
                .into_response()
        }
    }
}

async fn handle_chat(
    state: &Arc<ServerState>,
    headers: &HeaderMap,
    body: &[u8],
    request_id: &str,
    started: Instant,
) -> Result<(ChatResponse, usize), Failure> {
    if !is_json(headers) {
        return Err(Failure::new(
            StatusCode::BAD_REQUEST,
            "invalid_request",
            "content-type must be application/json",
        ));
    }
    let request: ChatRequest = serde_json::from_slice(body)
        .map_err(|e| Failure::new(StatusCode::BAD_REQUEST, "invalid_request", format!("invalid body: {e}")))?;
    if request.message.trim().is_empty() {
        return Err(Failure::new(StatusCode::BAD_REQUEST, "invalid_request", "message is empty"));
    }
    let len = request.message.chars().count();
    let limit = state.config.max_message_chars;
    if len > limit {
        return Err(Failure::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            "message_too_long",
            format!("message has {len} characters, the limit is {limit}"),
        ));
    }
    let Some(pipeline) = state.pipeline.clone() else {
        return Err(Failure::new(
            StatusCode::SERVICE_UNAVAILABLE,
            "index_not_loaded",
            "no index is loaded",
        ));
    };

    let permit = match state.slots.try_acquire() {
        Ok(p) => p,
        Err(_) => {
            if state.waiting.fetch_add(1, Ordering::SeqCst) >= state.config.queue_depth {
                state.waiting.fetch_sub(1, Ordering::SeqCst);
                return Err(Failure::new(
                    StatusCode::TOO_MANY_REQUESTS,
                    "over_capacity",
                    "too many requests in flight, retry later",
                ));
            }
            let permit = state.slots.acquire().await;
            state.waiting.fetch_sub(1, Ordering::SeqCst);
            permit.map_err(|_| Failure::new(StatusCode::SERVICE_UNAVAILABLE, "shutting_down", "server is stopping"))?
        }
    };

    let session_id = request.session_id.clone();
    let turn = tokio::task::spawn_blocking(move || pipeline.answer(&request.session_id, &request.message))
        .await
        .map_err(|_| Failure::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", "answer task failed"))?
        .map_err(rag_failure)?;
    drop(permit);

    let index = state.pipeline.as_ref().expect("checked above").index();
    let sources = turn
        .hits
        .iter()
        .map(|h| Source {
            doc_id: h.doc_id.clone(),
            similarity: h.similarity,
            snippet: snippet(&index.doc(h.position).answer, state.config.snippet_chars),
        })
        .collect();
    Ok((
        ChatResponse {
            answer: turn.answer,
            sources,
            latency_ms: started.elapsed().as_millis() as u64,
            request_id: request_id.to_string(),
            session_id,
        },
        turn.hits.len(),
    ))
}
