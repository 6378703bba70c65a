//! HTTP/SSE front end over one [`System`].
//!
//! Every route except `/healthz` requires `Authorization: Bearer <token>`
//! when a token is configured. Errors are JSON:
//! `{"error": {"code": "RangeOutOfBounds", "message": "..."}}`.

use std::collections::BTreeMap;
use std::convert::Infallible;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use axum::extract::{Path, Query as QueryParams, Request, State};
use axum::http::{header, StatusCode};
use axum::middleware::{self, Next};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use futures::stream::Stream;
use m2a_core::chat_agent::{Stage, StageEvent};
use m2a_core::semantic_store::EntryKind;
use m2a_core::{
    AgentSettings, AppConfig, Error, EvidenceRange, ManualEdit, System, TurnInput, TurnOptions,
};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::mpsc;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Idle,
    TurnInFlight,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionHandle {
    pub conversation_id: String,
    pub created_at: DateTime<Utc>,
    pub status: SessionStatus,
    pub config: Value,
}

struct Session {
    created_at: DateTime<Utc>,
    busy: Arc<AtomicBool>,
}

pub struct AppState {
    system: System,
    config_snapshot: Value,
    sessions: Mutex<BTreeMap<String, Session>>,
    token: Option<String>,
    page_size: usize,
}

impl AppState {
    /// Registers every conversation already present in the raw log.
    pub fn new(system: System, settings: &AgentSettings, token: Option<String>, page_size: usize) -> Result<Self, Error> {
        let config_snapshot = json!({
            "retrieval": settings.retrieval,
            "memory_manager": settings.memory_manager,
            "chat_agent": settings.chat_agent,
        });
        let mut sessions = BTreeMap::new();
        for cid in system.raw.conversations()? {
            let created_at = system.raw.head_timestamp(&cid)?.unwrap_or_else(Utc::now);
            sessions.insert(
                cid,
                Session {
                    created_at,
                    busy: Arc::default(),
                },
            );
        }
        Ok(Self {
            system,
            config_snapshot,
            sessions: Mutex::new(sessions),
            token,
            page_size: page_size.max(1),
        })
    }

    pub fn from_config(cfg: &AppConfig) -> Result<Self, Error> {
        let gateway = cfg.gateway.build()?;
        let embedder = cfg.build_embedder(&gateway)?;
        let settings = AgentSettings::from_config(cfg)?;
        let system = System::from_config(cfg, embedder, gateway, &settings)?;
        Self::new(system, &settings, cfg.service.effective_token(), cfg.service.page_size)
    }

    pub fn system(&self) -> &System {
        &self.system
    }

    fn handle(&self, cid: &str, s: &Session) -> SessionHandle {
        SessionHandle {
            conversation_id: cid.to_string(),
            created_at: s.created_at,
            status: if s.busy.load(Ordering::SeqCst) {
                SessionStatus::TurnInFlight
            } else {
                SessionStatus::Idle
            },
            config: self.config_snapshot.clone(),
        }
    }

    fn require(&self, cid: &str) -> Result<Arc<AtomicBool>, ApiError> {
        self.sessions
            .lock()
            .get(cid)
            .map(|s| s.busy.clone())
            .ok_or_else(|| ApiError::unknown_conversation(cid))
    }
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }

    fn unknown_conversation(cid: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "UnknownConversation", format!("unknown conversation `{cid}`"))
    }

    fn body(&self) -> Value {
        json!({"error": {"code": self.code, "message": self.message}})
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let (status, code) = match &e {
            Error::RangeOutOfBounds { .. } => (StatusCode::RANGE_NOT_SATISFIABLE, "RangeOutOfBounds"),
            Error::InvalidEvidence(_) => (StatusCode::UNPROCESSABLE_ENTITY, "InvalidEvidence"),
            Error::InvalidEntry(_) => (StatusCode::UNPROCESSABLE_ENTITY, "InvalidEntry"),
            Error::TimestampRegression { .. } => (StatusCode::UNPROCESSABLE_ENTITY, "TimestampRegression"),
            Error::NoImageContent(_) => (StatusCode::UNPROCESSABLE_ENTITY, "NoImageContent"),
            Error::ImageUnreadable(_) => (StatusCode::UNPROCESSABLE_ENTITY, "ImageUnreadable"),
            Error::EmptyInput => (StatusCode::BAD_REQUEST, "EmptyInput"),
            Error::InvalidRequest(_) => (StatusCode::BAD_REQUEST, "InvalidRequest"),
            Error::UnknownEntry(_) => (StatusCode::NOT_FOUND, "UnknownEntry"),
            Error::UnknownMessage(_) => (StatusCode::NOT_FOUND, "UnknownMessage"),
            Error::CaptionAlreadySet(_) => (StatusCode::CONFLICT, "CaptionAlreadySet"),
            Error::ProviderUnavailable(_) => (StatusCode::BAD_GATEWAY, "ProviderUnavailable"),
            Error::TransportError(_) => (StatusCode::BAD_GATEWAY, "TransportError"),
            Error::MalformedToolArguments(_) => (StatusCode::BAD_GATEWAY, "MalformedToolArguments"),
            Error::SchemaViolation(_) => (StatusCode::BAD_GATEWAY, "SchemaViolation"),
            Error::ContextOverflow(_) => (StatusCode::BAD_GATEWAY, "ContextOverflow"),
            Error::EmbedFailure(_) => (StatusCode::BAD_GATEWAY, "EmbedFailure"),
            _ => (StatusCode::INTERNAL_SERVER_ERROR, "Internal"),
        };
        Self::new(status, code, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body())).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

pub fn router(state: Arc<AppState>) -> Router {
    let api = Router::new()
        .route("/v1/sessions", get(list_sessions).post(create_session))
        .route("/v1/sessions/{cid}", get(get_session))
        .route("/v1/chat/{cid}", post(chat))
        .route("/v1/memory/{cid}/entries", get(list_entries))
        .route("/v1/memory/{cid}/search", post(search))
        .route("/v1/memory/{cid}/manual", post(manual))
        .route("/v1/raw/{cid}", get(raw_messages))
        .route_layer(middleware::from_fn_with_state(state.clone(), auth));
    Router::new()
        .route("/healthz", get(|| async { Json(json!({"status": "ok"})) }))
        .merge(api)
        .with_state(state)
}

async fn auth(State(state): State<Arc<AppState>>, req: Request, next: Next) -> Response {
    if let Some(token) = &state.token {
        let ok = req
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .is_some_and(|t| t == token);
        if !ok {
            return ApiError::new(StatusCode::UNAUTHORIZED, "Unauthorized", "missing or wrong bearer token").into_response();
        }
    }
    next.run(req).await
}

async fn list_sessions(State(state): State<Arc<AppState>>) -> Json<Value> {
    let sessions: Vec<SessionHandle> = state.sessions.lock().iter().map(|(cid, s)| state.handle(cid, s)).collect();
    Json(json!({ "sessions": sessions }))
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateSession {
    #[serde(default)]
    conversation_id: Option<String>,
}

async fn create_session(State(state): State<Arc<AppState>>, body: Option<Json<CreateSession>>) -> ApiResult<Response> {
    let body = body.map(|Json(b)| b).unwrap_or_default();
    let cid = match body.conversation_id {
        Some(c) if c.trim().is_empty() => {
            return Err(ApiError::from(Error::InvalidRequest("conversation_id must not be empty".into())))
        }
        Some(c) => c,
        None => format!("conv-{}", Utc::now().format("%Y%m%dT%H%M%S%.6f")),
    };
    let mut sessions = state.sessions.lock();
    let created = !sessions.contains_key(&cid);
    let s = sessions.entry(cid.clone()).or_insert_with(|| Session {
        created_at: Utc::now(),
        busy: Arc::default(),
    });
    let handle = state.handle(&cid, s);
    let status = if created { StatusCode::CREATED } else { StatusCode::OK };
    Ok((status, Json(handle)).into_response())
}

async fn get_session(State(state): State<Arc<AppState>>, Path(cid): Path<String>) -> ApiResult<Json<SessionHandle>> {
    let sessions = state.sessions.lock();
    let s = sessions.get(&cid).ok_or_else(|| ApiError::unknown_conversation(&cid))?;
    Ok(Json(state.handle(&cid, s)))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChatRequest {
    #[serde(default)]
    pub text: String,
    #[serde(default)]
    pub image_refs: Vec<String>,
}

/// Clears the in-flight flag however the turn ends.
struct InFlight(Arc<AtomicBool>);

impl Drop for InFlight {
    fn drop(&mut self) {
        self.0.store(false, Ordering::SeqCst);
    }
}

/// Pieces of generated text as they are streamed to the client.
fn chunks(text: &str) -> impl Iterator<Item = &str> {
    text.split_inclusive(char::is_whitespace)
}

fn sse(name: &str, data: &impl Serialize) -> Event {
    Event::default()
        .event(name)
        .json_data(data)
        .unwrap_or_else(|_| Event::default().event("error").data("{}"))
}

async fn chat(
    State(state): State<Arc<AppState>>,
    Path(cid): Path<String>,
    Json(req): Json<ChatRequest>,
) -> ApiResult<Sse<impl Stream<Item = Result<Event, Infallible>>>> {
    let busy = state.require(&cid)?;
    if req.text.trim().is_empty() && req.image_refs.is_empty() {
        return Err(Error::InvalidRequest("a turn needs text or images".into()).into());
    }
    if busy.compare_exchange(false, true, Ordering::SeqCst, Ordering::SeqCst).is_err() {
        return Err(ApiError::new(
            StatusCode::CONFLICT,
            "TurnInFlight",
            format!("a turn is already running for `{cid}`"),
        ));
    }
    let guard = InFlight(busy);
    let (tx, rx) = mpsc::unbounded_channel::<Event>();
    let agent = state.system.agent.clone();
    let input = TurnInput::new(&cid, req.text).with_images(req.image_refs);
    tokio::task::spawn_blocking(move || {
        let _guard = guard;
        let mut on_event = |ev: &StageEvent| {
            let _ = tx.send(sse("stage", ev));
            if ev.stage == Stage::Generate {
                if let Some(text) = ev.detail.get("text").and_then(Value::as_str) {
                    for piece in chunks(text) {
                        let _ = tx.send(sse("delta", &json!({ "text": piece })));
                    }
                }
            }
        };
        match agent.handle_turn_with(input, TurnOptions::default(), &mut on_event) {
            Ok(result) => {
                let _ = tx.send(sse("final", &result));
            }
            Err(e) => {
                let err = ApiError::from(e);
                let mut body = err.body();
                body["error"]["status"] = json!(err.status.as_u16());
                let _ = tx.send(sse("error", &body));
            }
        }
    });
    let stream = futures::stream::unfold(rx, |mut rx| async move { rx.recv().await.map(|ev| (Ok(ev), rx)) });
    Ok(Sse::new(stream).keep_alive(KeepAlive::default()))
}

#[derive(Debug, Deserialize)]
struct EntriesParams {
    #[serde(default)]
    kind: Option<String>,
    #[serde(default)]
    page: Option<usize>,
}

async fn list_entries(
    State(state): State<Arc<AppState>>,
    Path(cid): Path<String>,
    QueryParams(p): QueryParams<EntriesParams>,
) -> ApiResult<Json<Value>> {
    state.require(&cid)?;
    let kind = match p.kind.as_deref().filter(|k| !k.is_empty()) {
        Some(k) => Some(k.parse::<EntryKind>()?),
        None => None,
    };
    let page = p.page.unwrap_or(1);
    if page == 0 {
        return Err(Error::InvalidRequest("page is 1-based".into()).into());
    }
    let entries = state.system.store.list_entries(&cid, kind)?;
    let total = entries.len();
    let items: Vec<_> = entries.into_iter().skip((page - 1) * state.page_size).take(state.page_size).collect();
    Ok(Json(json!({
        "entries": items,
        "page": page,
        "page_size": state.page_size,
        "total": total,
    })))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchRequest {
    pub q_text: String,
    #[serde(default)]
    pub q_image_ref: Option<String>,
    #[serde(default)]
    pub final_k: Option<usize>,
}

async fn search(
    State(state): State<Arc<AppState>>,
    Path(cid): Path<String>,
    Json(req): Json<SearchRequest>,
) -> ApiResult<Json<Value>> {
    state.require(&cid)?;
    let retriever = state.system.retriever.clone();
    let mut q = retriever.query(req.q_text);
    q.q_image = req.q_image_ref;
    if let Some(k) = req.final_k {
        q = q.with_final_k(k);
    }
    let results = blocking(move || retriever.retrieve(&cid, &q)).await?;
    Ok(Json(json!({ "results": results })))
}

#[derive(Debug, Deserialize)]
struct RawParams {
    #[serde(default)]
    start: Option<u64>,
    #[serde(default)]
    end: Option<u64>,
}

async fn raw_messages(
    State(state): State<Arc<AppState>>,
    Path(cid): Path<String>,
    QueryParams(p): QueryParams<RawParams>,
) -> ApiResult<Json<Value>> {
    state.require(&cid)?;
    let raw = &state.system.raw;
    let len = raw.len(&cid)?;
    if len == 0 && p.start.is_none() && p.end.is_none() {
        return Ok(Json(json!({ "messages": [] })));
    }
    let range = EvidenceRange::new(p.start.unwrap_or(0), p.end.unwrap_or(len.saturating_sub(1)))?;
    let messages = raw.fetch_range(&cid, range)?;
    Ok(Json(json!({ "messages": messages })))
}

async fn manual(
    State(state): State<Arc<AppState>>,
    Path(cid): Path<String>,
    Json(edit): Json<ManualEdit>,
) -> ApiResult<Json<Value>> {
    state.require(&cid)?;
    let memory = state.system.memory.clone();
    let outcome = blocking(move || memory.apply_manual(&cid, edit)).await?;
    Ok(Json(serde_json::to_value(outcome).map_err(Error::from)?))
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> m2a_core::Result<T> + Send + 'static) -> ApiResult<T> {
    match tokio::task::spawn_blocking(f).await {
        Ok(r) => r.map_err(ApiError::from),
        Err(e) => Err(ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "Internal", e.to_string())),
    }
}

/// Binds `bind` and serves until the process is stopped.
pub async fn serve(state: Arc<AppState>, bind: &str) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(bind).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state)).await
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunks_rebuild_the_text() {
        let text = "Your dog is  called Bobo.\nAnything else?";
        assert_eq!(chunks(text).collect::<String>(), text);
        assert!(chunks(text).count() > 3);
    }

    #[test]
    fn status_mapping() {
        let e = ApiError::from(Error::RangeOutOfBounds { start: 3, end: 9, len: 2 });
        assert_eq!(e.status, StatusCode::RANGE_NOT_SATISFIABLE);
        assert_eq!(ApiError::from(Error::InvalidEvidence("x".into())).status, StatusCode::UNPROCESSABLE_ENTITY);
        assert_eq!(ApiError::from(Error::UnknownEntry("e".into())).status, StatusCode::NOT_FOUND);
        assert_eq!(ApiError::from(Error::TransportError("down".into())).status, StatusCode::BAD_GATEWAY);
    }
}
