//! HTTP service: sessions, snapshots, one POST route per operation, and an
//! event stream.

use std::convert::Infallible;
use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::Stream;
use serde::Deserialize;
use serde_json::{json, Value};
use thiserror::Error;
use tokio::sync::broadcast::error::RecvError;

use strata_core::compiler::{export_markup, export_provenance, export_text};
use strata_core::friends::{Catalog, PERSONAS};
use strata_core::gateway::BackendDescriptor;
use strata_core::prompt::TaskRegistry;
use strata_core::studio::StrataError;
use strata_core::{Command, LayerId};

use crate::session::{SessionError, Sessions};

pub struct AppState {
    pub sessions: Sessions,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: String,
    message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            code: code.to_string(),
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad-request", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({"error": self.code, "message": self.message});
        (self.status, Json(body)).into_response()
    }
}

fn status_for(code: &str) -> StatusCode {
    match code {
        "lock-conflict" | "placeholder-busy" | "z-order-conflict" | "wrong-state" => StatusCode::CONFLICT,
        "schema-invalid" | "backend-error" => StatusCode::BAD_GATEWAY,
        "timeout" => StatusCode::GATEWAY_TIMEOUT,
        "io-error" | "corrupt-file" | "version-mismatch" => StatusCode::INTERNAL_SERVER_ERROR,
        c if c.starts_with("unknown-") => StatusCode::NOT_FOUND,
        _ => StatusCode::UNPROCESSABLE_ENTITY,
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        let code = e.code();
        ApiError::new(status_for(code), code, e.to_string())
    }
}

impl From<StrataError> for ApiError {
    fn from(e: StrataError) -> Self {
        let code = e.code();
        ApiError::new(status_for(code), code, e.to_string())
    }
}

type ApiResult = Result<Json<Value>, ApiError>;

/// Path of the route serving `op`.
pub fn op_path(op: &str) -> String {
    format!("/api/sessions/{{id}}/ops/{op}")
}

/// Every route, as `METHOD path`, in registration order.
pub fn endpoints() -> Vec<String> {
    let mut out: Vec<String> = [
        "GET /health",
        "GET /api/friends",
        "GET /api/tasks",
        "GET /api/templates",
        "GET /api/ops",
        "GET /api/sessions",
        "POST /api/sessions",
        "GET /api/sessions/{id}",
        "DELETE /api/sessions/{id}",
        "POST /api/sessions/{id}/save",
        "GET /api/sessions/{id}/snapshot",
        "GET /api/sessions/{id}/events",
        "GET /api/sessions/{id}/documents/{layer}",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    out.extend(Command::OPS.iter().map(|op| format!("POST {}", op_path(op))));
    out
}

pub fn router(state: Arc<AppState>) -> Router {
    let mut r = Router::new()
        .route("/health", get(health))
        .route("/api/friends", get(friends))
        .route("/api/tasks", get(tasks))
        .route("/api/templates", get(templates))
        .route("/api/ops", get(ops))
        .route("/api/sessions", get(list_sessions).post(open_session))
        .route("/api/sessions/{id}", get(session_info).delete(close_session))
        .route("/api/sessions/{id}/save", post(save_session))
        .route("/api/sessions/{id}/snapshot", get(snapshot))
        .route("/api/sessions/{id}/events", get(events))
        .route("/api/sessions/{id}/documents/{layer}", get(document));
    for op in Command::OPS {
        r = r.route(
            &op_path(op),
            post(move |state, path, body| run_op(state, path, op, body)),
        );
    }
    r.with_state(state)
}

async fn health() -> Json<Value> {
    Json(json!({"status": "ok"}))
}

/// The seven personas in menu order, then the other model-backed features.
async fn friends() -> Json<Value> {
    let catalog = Catalog::builtin();
    let personas: Vec<_> = PERSONAS.iter().filter_map(|id| catalog.get(id).ok()).collect();
    let others: Vec<_> = catalog
        .iter()
        .filter(|f| !PERSONAS.contains(&f.id.as_str()))
        .collect();
    Json(json!({ "friends": personas, "features": others }))
}

async fn tasks() -> Json<Value> {
    let list: Vec<Value> = TaskRegistry::builtin()
        .iter()
        .map(|t| {
            json!({
                "id": t.id,
                "version": t.version,
                "friend": t.friend,
                "schema": t.schema,
                "render_target": t.render_target,
            })
        })
        .collect();
    Json(json!({ "tasks": list }))
}

async fn templates() -> Json<Value> {
    let list: Vec<_> = strata_core::friends::TemplateRegistry::builtin().iter().cloned().collect();
    Json(json!({ "templates": list }))
}

async fn ops() -> Json<Value> {
    Json(json!({ "ops": &Command::OPS[..], "endpoints": endpoints() }))
}

async fn list_sessions(State(s): State<Arc<AppState>>) -> Json<Value> {
    Json(json!({ "sessions": s.sessions.list() }))
}

#[derive(Deserialize)]
struct OpenRequest {
    workspace: String,
}

async fn open_session(State(s): State<Arc<AppState>>, Json(req): Json<OpenRequest>) -> ApiResult {
    let info = s.sessions.open(&req.workspace)?;
    Ok(Json(serde_json::to_value(info).expect("session info serializes")))
}

async fn session_info(State(s): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult {
    let info = s.sessions.get(&id)?.info();
    Ok(Json(serde_json::to_value(info).expect("session info serializes")))
}

async fn close_session(State(s): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult {
    let revision = s.sessions.close(&id).await?;
    Ok(Json(json!({ "closed": id, "revision": revision })))
}

async fn save_session(State(s): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult {
    let revision = s.sessions.get(&id)?.save().await?;
    Ok(Json(json!({ "saved": revision })))
}

#[derive(Deserialize)]
struct SnapshotQuery {
    since: Option<u64>,
}

async fn snapshot(
    State(s): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<SnapshotQuery>,
) -> ApiResult {
    let session = s.sessions.get(&id)?;
    let engine = session.studio.engine();
    if let Some(delta) = q.since.and_then(|r| engine.delta_since(r)) {
        return Ok(Json(json!({ "kind": "delta", "delta": delta })));
    }
    let w = engine.snapshot();
    Ok(Json(json!({ "kind": "full", "revision": w.revision, "workspace": &*w })))
}

#[derive(Deserialize)]
struct DocumentQuery {
    format: Option<String>,
}

async fn document(
    State(s): State<Arc<AppState>>,
    Path((id, layer)): Path<(String, u64)>,
    Query(q): Query<DocumentQuery>,
) -> Result<Response, ApiError> {
    let session = s.sessions.get(&id)?;
    let snap = session.studio.snapshot();
    let l = snap.layer(LayerId(layer)).map_err(StrataError::from)?;
    let doc = l.document().ok_or_else(|| {
        ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "type-mismatch", format!("{} is not a document", l.id))
    })?;
    Ok(match q.format.as_deref().unwrap_or("provenance") {
        "text" => export_text(doc).into_response(),
        "markup" => export_markup(doc).into_response(),
        "provenance" => Json(export_provenance(doc)).into_response(),
        other => return Err(ApiError::bad_request(format!("unknown format {other}"))),
    })
}

/// Add the op tag to a body of fields and decode the command.
pub fn decode_command(op: &str, body: Value) -> Result<Command, String> {
    let mut fields = match body {
        Value::Object(m) => m,
        Value::Null => serde_json::Map::new(),
        _ => return Err("request body must be a JSON object".into()),
    };
    fields.insert("op".into(), Value::String(op.to_string()));
    serde_json::from_value(Value::Object(fields)).map_err(|e| e.to_string())
}

async fn run_op(
    State(s): State<Arc<AppState>>,
    Path(id): Path<String>,
    op: &'static str,
    body: Option<Json<Value>>,
) -> ApiResult {
    let session = s.sessions.get(&id)?;
    let body = body.map(|Json(v)| v).unwrap_or(Value::Null);
    let cmd = decode_command(op, body).map_err(ApiError::bad_request)?;
    let read_only = cmd.is_read_only();
    let outcome = session.studio.execute(cmd).await?;
    let revision = if read_only {
        session.studio.engine().revision()
    } else {
        session.save().await?
    };
    Ok(Json(json!({ "revision": revision, "outcome": outcome })))
}

async fn events(
    State(s): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> Result<Sse<impl Stream<Item = Result<Event, Infallible>>>, ApiError> {
    let session = s.sessions.get(&id)?;
    let rx = session.studio.engine().subscribe();
    let revision = session.studio.engine().revision();
    let hello = Event::default()
        .event("hello")
        .json_data(json!({ "revision": revision }))
        .expect("json");
    let rest = futures::stream::unfold(rx, |mut rx| async move {
        let event = match rx.recv().await {
            Ok(ev) => {
                let name = match &ev {
                    strata_core::EngineEvent::Notice { .. } => "notice",
                    strata_core::EngineEvent::Committed { .. } => "committed",
                };
                Event::default().event(name).json_data(&ev).expect("json")
            }
            Err(RecvError::Lagged(n)) => Event::default()
                .event("lagged")
                .json_data(json!({ "missed": n }))
                .expect("json"),
            Err(RecvError::Closed) => return None,
        };
        Some((Ok(event), rx))
    });
    let stream = futures::StreamExt::chain(futures::stream::once(async { Ok(hello) }), rest);
    Ok(Sse::new(stream).keep_alive(KeepAlive::new().interval(Duration::from_secs(15))))
}

#[derive(Debug, Error)]
pub enum ServeError {
    #[error("port {0} is in use")]
    PortInUse(u16),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

impl ServeError {
    pub fn code(&self) -> &'static str {
        match self {
            ServeError::PortInUse(_) => "port-in-use",
            ServeError::Io(_) => "io-error",
        }
    }
}

pub struct ServeConfig {
    pub port: u16,
    pub workspace_dir: std::path::PathBuf,
    pub backend: BackendDescriptor,
}

/// Bind the configured port. Port 0 picks a free one.
pub async fn bind(port: u16) -> Result<tokio::net::TcpListener, ServeError> {
    let addr = SocketAddr::from(([127, 0, 0, 1], port));
    tokio::net::TcpListener::bind(addr).await.map_err(|e| {
        if e.kind() == std::io::ErrorKind::AddrInUse {
            ServeError::PortInUse(port)
        } else {
            ServeError::Io(e)
        }
    })
}

pub fn state(config: &ServeConfig) -> Arc<AppState> {
    Arc::new(AppState {
        sessions: Sessions::new(&config.workspace_dir, config.backend.clone()),
    })
}

/// Serve until `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    state: Arc<AppState>,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> Result<(), ServeError> {
    axum::serve(listener, router(state))
        .with_graceful_shutdown(shutdown)
        .await?;
    Ok(())
}
