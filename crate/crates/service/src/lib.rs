//! HTTP front end for one authoring session.
//!
//! Reads take a short shared lock on the session. Mutations are serialized
//! by a writer mutex: a command runs the agents against a snapshot while
//! readers keep seeing the previous revision, then the result is swapped in
//! under a brief exclusive lock.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, RwLock};

use arscene_core::agents::{Authoring, Brainstormer, Mode, UserCommand};
use arscene_core::model::Vec3;
use arscene_core::session::{ManualEdit, Session, SessionError};
use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::{json, Value};
use tower_http::services::ServeDir;

pub struct AppState {
    session: RwLock<Session>,
    writer: tokio::sync::Mutex<()>,
    authoring: Arc<Authoring>,
    brainstormer: Mutex<Brainstormer>,
    /// Candidates proposed per assisted command.
    candidates: usize,
    /// Scene file rewritten after every committed mutation.
    save: Option<PathBuf>,
}

impl AppState {
    pub fn new(session: Session, authoring: Authoring, brainstormer: Brainstormer, candidates: usize) -> Self {
        Self {
            session: RwLock::new(session),
            writer: tokio::sync::Mutex::new(()),
            authoring: Arc::new(authoring),
            brainstormer: Mutex::new(brainstormer),
            candidates,
            save: None,
        }
    }

    pub fn with_save(mut self, path: PathBuf) -> Self {
        self.save = Some(path);
        self
    }

    /// Copy of the current session.
    pub fn snapshot(&self) -> Session {
        self.session.read().unwrap().clone()
    }
}

/// Error body: `{"error": code, "message": text}`.
#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn bad_request(message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::BAD_REQUEST,
            code: "malformed",
            message: message.into(),
        }
    }

    fn internal(message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            code: "internal",
            message: message.into(),
        }
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        let status = match &e {
            _ if e.is_port_failure() => StatusCode::SERVICE_UNAVAILABLE,
            SessionError::NoPending | SessionError::Stale { .. } => StatusCode::CONFLICT,
            SessionError::UnknownGuid(_) => StatusCode::NOT_FOUND,
            _ => StatusCode::BAD_REQUEST,
        };
        Self {
            status,
            code: e.code(),
            message: e.to_string(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        if self.status.is_server_error() {
            tracing::warn!(code = self.code, "{}", self.message);
        }
        (self.status, Json(json!({"error": self.code, "message": self.message}))).into_response()
    }
}

type ApiResult = Result<Json<Value>, ApiError>;

/// JSON body parsing with 400 on any failure; an empty body reads as `{}`.
fn body<T: DeserializeOwned>(bytes: &Bytes) -> Result<T, ApiError> {
    let raw: &[u8] = if bytes.iter().all(u8::is_ascii_whitespace) { b"{}" } else { bytes };
    serde_json::from_slice(raw).map_err(|e| ApiError::bad_request(e.to_string()))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CommandBody {
    text: String,
    mode: Mode,
    #[serde(default)]
    anchor: Option<Vec3>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CommitBody {
    index: usize,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct BrainstormBody {
    #[serde(default)]
    text: Option<String>,
}

async fn get_scene(State(st): State<Arc<AppState>>) -> Json<Value> {
    let s = st.session.read().unwrap();
    Json(json!({"revision": s.revision, "scene": s.scene}))
}

async fn get_assets(State(st): State<Arc<AppState>>) -> Json<Value> {
    Json(json!({"assets": st.authoring.store.list()}))
}

async fn get_candidates(State(st): State<Arc<AppState>>) -> Json<Value> {
    let s = st.session.read().unwrap();
    match &s.pending {
        Some(p) => Json(json!({
            "revision": s.revision,
            "command": p.command,
            "selected": s.selected,
            "candidates": p.candidates,
            "warnings": p.warnings,
        })),
        None => Json(json!({
            "revision": s.revision,
            "command": null,
            "selected": null,
            "candidates": [],
            "warnings": [],
        })),
    }
}

/// Writes the scene file if one is configured. Called with the writer
/// mutex held so saves land in revision order.
fn persist(st: &AppState) -> Result<(), ApiError> {
    if let Some(path) = &st.save {
        let snap = st.snapshot();
        snap.save(path)
            .map_err(|e| ApiError::internal(format!("saving {}: {e}", path.display())))?;
    }
    Ok(())
}

async fn post_command(State(st): State<Arc<AppState>>, bytes: Bytes) -> ApiResult {
    let b: CommandBody = body(&bytes)?;
    let mut cmd = UserCommand::new(&b.text, b.mode);
    if let Some(a) = b.anchor {
        cmd = cmd.with_anchor(a);
    }
    let _w = st.writer.lock().await;
    let snap = st.snapshot();
    let auth = st.authoring.clone();
    let k = st.candidates;
    let proposal = tokio::task::spawn_blocking(move || snap.propose(&auth, &cmd, k))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))??;
    let outcome = st.session.write().unwrap().apply(proposal)?;
    if matches!(outcome, arscene_core::session::Outcome::Committed { .. }) {
        persist(&st)?;
    }
    tracing::info!(?outcome, "command");
    Ok(Json(serde_json::to_value(outcome).expect("outcome serializes")))
}

async fn post_commit(State(st): State<Arc<AppState>>, bytes: Bytes) -> ApiResult {
    let b: CommitBody = body(&bytes)?;
    let _w = st.writer.lock().await;
    let revision = st.session.write().unwrap().commit(b.index)?;
    persist(&st)?;
    Ok(Json(json!({"revision": revision})))
}

async fn post_manual(State(st): State<Arc<AppState>>, bytes: Bytes) -> ApiResult {
    let edit: ManualEdit = body(&bytes)?;
    let _w = st.writer.lock().await;
    let revision = st.session.write().unwrap().manual(&edit)?;
    persist(&st)?;
    Ok(Json(json!({"revision": revision})))
}

async fn post_brainstorm(State(st): State<Arc<AppState>>, bytes: Bytes) -> ApiResult {
    let b: BrainstormBody = body(&bytes)?;
    let scene = st.snapshot().scene;
    let st2 = st.clone();
    let idea = tokio::task::spawn_blocking(move || {
        let mut bs = st2.brainstormer.lock().unwrap();
        bs.ask(&scene, &st2.authoring.store, b.text.as_deref())
    })
    .await
    .map_err(|e| ApiError::internal(e.to_string()))?;
    Ok(Json(serde_json::to_value(idea).expect("idea serializes")))
}

/// API routes, plus static files from `viewer_dir` for every other path.
pub fn router(state: Arc<AppState>, viewer_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/scene", get(get_scene))
        .route("/assets", get(get_assets))
        .route("/candidates", get(get_candidates))
        .route("/command", post(post_command))
        .route("/commit", post(post_commit))
        .route("/manual", post(post_manual))
        .route("/brainstorm", post(post_brainstorm))
        .with_state(state);
    match viewer_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

/// Binds `addr` and serves until ctrl-c. Returns the bound address through
/// `on_bound` before accepting connections (useful with port 0).
pub async fn serve(
    addr: SocketAddr,
    state: Arc<AppState>,
    viewer_dir: Option<PathBuf>,
    on_bound: impl FnOnce(SocketAddr),
) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    on_bound(listener.local_addr()?);
    axum::serve(listener, router(state, viewer_dir))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
