//! Session-facing HTTP API. Clients create sessions, follow their events,
//! resolve gates and download artifacts. Only session creation and gate
//! resolution change anything.

use std::collections::BTreeMap;
use std::convert::Infallible;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::{Stream, StreamExt};
use parking_lot::Mutex;
use serde::Deserialize;
use serde_json::{json, Value};

use crate::agents::store::{BRIEF, SURVEY, TRANSCRIPT, TREE};
use crate::agents::{AutoApprove, ChannelGates, GateBoard, GateError, GateResponder, Resolution, Runtime, Session, SessionStore};
use crate::events::EventLog;
use crate::state::{PipelineState, ReferenceDocument, Stage};

pub const EVENTS_FILE: &str = "events.jsonl";

struct Entry {
    store: SessionStore,
    events: Arc<EventLog>,
    board: Arc<GateBoard>,
    outcome: Mutex<Option<Result<(), String>>>,
}

struct Inner {
    root: PathBuf,
    rt: Runtime,
    sessions: Mutex<BTreeMap<String, Arc<Entry>>>,
}

/// Shared service state; cheap to clone.
#[derive(Clone)]
pub struct Service {
    inner: Arc<Inner>,
}

#[derive(Debug)]
struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self { status, code, message: message.into() }
    }

    fn no_session(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "no_such_session", format!("no session `{id}`"))
    }

    fn invalid(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, "validation_error", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({"code": self.code, "message": self.message}))).into_response()
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Upload {
    filename: String,
    #[serde(default)]
    title: String,
    body: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateBody {
    topic: String,
    #[serde(default)]
    goals: String,
    #[serde(default)]
    uploads: Vec<Upload>,
    /// Auto-approve every gate instead of waiting for feedback.
    #[serde(default)]
    headless: bool,
}

#[derive(Debug, Deserialize)]
struct FeedbackBody {
    gate_id: String,
    #[serde(flatten)]
    resolution: Resolution,
}

#[derive(Debug, Deserialize)]
struct EventsQuery {
    #[serde(default)]
    from: u64,
}

fn parse<T: serde::de::DeserializeOwned>(body: &[u8]) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::invalid(e.to_string()))
}

impl Service {
    /// Opens the service over `root`, re-hydrating every session found
    /// there: unfinished ones resume from their last checkpoint.
    pub fn open(root: impl Into<PathBuf>, rt: Runtime) -> std::io::Result<Self> {
        let root = root.into();
        std::fs::create_dir_all(&root)?;
        let svc = Self { inner: Arc::new(Inner { root: root.clone(), rt, sessions: Mutex::new(BTreeMap::new()) }) };
        let mut dirs: Vec<PathBuf> =
            std::fs::read_dir(&root)?.filter_map(|e| e.ok()).map(|e| e.path()).filter(|p| p.is_dir()).collect();
        dirs.sort();
        for dir in dirs {
            svc.rehydrate(&dir);
        }
        Ok(svc)
    }

    fn rehydrate(&self, dir: &Path) {
        let Some(id) = dir.file_name().and_then(|n| n.to_str()).map(str::to_string) else { return };
        let Ok(store) = SessionStore::open(dir) else { return };
        let Ok(Some(state)) = store.latest_checkpoint() else { return };
        let Ok(events) = EventLog::persistent(&store.path(EVENTS_FILE)) else { return };
        let entry = Arc::new(Entry {
            store: store.clone(),
            events: Arc::new(events),
            board: Arc::new(GateBoard::new()),
            outcome: Mutex::new(None),
        });
        if state.stage == Stage::Done {
            entry.events.close();
            *entry.outcome.lock() = Some(Ok(()));
        } else {
            let gates: Arc<dyn GateResponder> = Arc::new(ChannelGates::new(entry.board.clone()));
            match Session::resume(self.inner.rt.clone(), store, gates) {
                Ok(session) => self.spawn(session.with_events(entry.events.clone()), entry.clone()),
                Err(e) => *entry.outcome.lock() = Some(Err(e.to_string())),
            }
        }
        self.inner.sessions.lock().insert(id, entry);
    }

    fn spawn(&self, mut session: Session, entry: Arc<Entry>) {
        tokio::spawn(async move {
            let outcome = session.run(None).await.map(|_| ()).map_err(|e| e.to_string());
            *entry.outcome.lock() = Some(outcome);
            entry.events.close();
        });
    }

    fn entry(&self, id: &str) -> Result<Arc<Entry>, ApiError> {
        self.inner.sessions.lock().get(id).cloned().ok_or_else(|| ApiError::no_session(id))
    }

    fn create(&self, body: CreateBody) -> Result<String, ApiError> {
        let topic = body.topic.trim();
        if topic.is_empty() {
            return Err(ApiError::invalid("topic must not be empty"));
        }
        let mut uploads = Vec::new();
        for u in &body.uploads {
            if u.body.trim().is_empty() {
                return Err(ApiError::invalid(format!("upload `{}` is empty", u.filename)));
            }
            let title = if u.title.trim().is_empty() { u.filename.clone() } else { u.title.clone() };
            uploads.push(ReferenceDocument::upload(u.filename.clone(), title, u.body.clone()));
        }
        let internal = |e: String| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e);
        let mut sessions = self.inner.sessions.lock();
        let mut n = sessions.len() + 1;
        let id = loop {
            let id = format!("s{n:04}");
            if !sessions.contains_key(&id) && !self.inner.root.join(&id).exists() {
                break id;
            }
            n += 1;
        };
        let store = SessionStore::create(self.inner.root.join(&id)).map_err(|e| internal(e.to_string()))?;
        let events = EventLog::persistent(&store.path(EVENTS_FILE)).map_err(|e| internal(e.to_string()))?;
        let entry = Arc::new(Entry {
            store: store.clone(),
            events: Arc::new(events),
            board: Arc::new(GateBoard::new()),
            outcome: Mutex::new(None),
        });
        let gates: Arc<dyn GateResponder> =
            if body.headless { Arc::new(AutoApprove) } else { Arc::new(ChannelGates::new(entry.board.clone())) };
        let mut state = PipelineState::new(id.clone(), topic, body.goals.trim());
        state.uploads = uploads;
        let session = Session::new(self.inner.rt.clone(), state, gates, Some(store))
            .map_err(|e| internal(e.to_string()))?
            .with_events(entry.events.clone());
        sessions.insert(id.clone(), entry.clone());
        drop(sessions);
        self.spawn(session, entry);
        Ok(id)
    }

    pub fn router(&self) -> Router {
        Router::new()
            .route("/healthz", get(healthz))
            .route("/sessions", post(create_session))
            .route("/sessions/{id}", get(session_status))
            .route("/sessions/{id}/events", get(stream_events))
            .route("/sessions/{id}/feedback", post(submit_feedback))
            .route("/sessions/{id}/artifacts/{kind}", get(get_artifact))
            .with_state(self.clone())
    }

    /// Binds and serves in the background.
    pub async fn serve(&self, addr: SocketAddr) -> std::io::Result<(SocketAddr, tokio::task::JoinHandle<()>)> {
        let listener = tokio::net::TcpListener::bind(addr).await?;
        let local = listener.local_addr()?;
        let app = self.router();
        let task = tokio::spawn(async move {
            if let Err(e) = axum::serve(listener, app).await {
                tracing::error!("service stopped: {e}");
            }
        });
        Ok((local, task))
    }
}

async fn healthz() -> Json<Value> {
    Json(json!({"status": "ok"}))
}

async fn create_session(State(svc): State<Service>, body: axum::body::Bytes) -> Result<Response, ApiError> {
    let id = svc.create(parse(&body)?)?;
    Ok((StatusCode::CREATED, Json(json!({"session_id": id}))).into_response())
}

async fn session_status(State(svc): State<Service>, UrlPath(id): UrlPath<String>) -> Result<Json<Value>, ApiError> {
    let entry = svc.entry(&id)?;
    let stage = entry.store.latest_checkpoint().ok().flatten().map(|s| s.stage);
    let outcome = entry.outcome.lock().clone();
    Ok(Json(json!({
        "session_id": id,
        "stage": stage,
        "pending_gate": entry.board.pending(),
        "finished": outcome.is_some(),
        "error": outcome.and_then(|o| o.err()),
        "events": entry.events.len(),
    })))
}

async fn stream_events(
    State(svc): State<Service>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<EventsQuery>,
) -> Result<Sse<impl Stream<Item = Result<Event, Infallible>>>, ApiError> {
    let entry = svc.entry(&id)?;
    let stream = entry.events.subscribe_from(q.from).map(|e| {
        let kind = serde_json::to_value(e.kind).ok().and_then(|k| k.as_str().map(str::to_string)).unwrap_or_default();
        Ok(Event::default().id(e.seq.to_string()).event(kind).data(serde_json::to_string(&e).expect("event serializes")))
    });
    Ok(Sse::new(stream).keep_alive(KeepAlive::default()))
}

async fn submit_feedback(
    State(svc): State<Service>,
    UrlPath(id): UrlPath<String>,
    body: axum::body::Bytes,
) -> Result<Response, ApiError> {
    let entry = svc.entry(&id)?;
    let fb: FeedbackBody = parse(&body)?;
    if let Resolution::Revise { text } = &fb.resolution {
        if text.trim().is_empty() {
            return Err(ApiError::invalid("revise needs non-empty text"));
        }
    }
    match entry.board.submit(&fb.gate_id, fb.resolution) {
        Ok(()) => Ok((StatusCode::ACCEPTED, Json(json!({"accepted": true, "gate_id": fb.gate_id}))).into_response()),
        Err(e @ GateError::NoSuchGate(_)) => Err(ApiError::new(StatusCode::NOT_FOUND, "no_such_gate", e.to_string())),
        Err(e @ GateError::AlreadyResolved(_)) => {
            Err(ApiError::new(StatusCode::CONFLICT, "gate_already_resolved", e.to_string()))
        }
    }
}

async fn get_artifact(
    State(svc): State<Service>,
    UrlPath((id, kind)): UrlPath<(String, String)>,
) -> Result<Response, ApiError> {
    let entry = svc.entry(&id)?;
    let (contents, mime) = match kind.as_str() {
        "brief" => (entry.store.read_artifact(BRIEF), "application/json"),
        "tree" => (entry.store.read_artifact(TREE), "application/json"),
        "skeleton" => (entry.store.latest_skeleton(), "application/json"),
        "survey" => (entry.store.read_artifact(SURVEY), "text/markdown; charset=utf-8"),
        "transcript" => (entry.store.read_artifact(TRANSCRIPT), "application/x-ndjson"),
        other => {
            return Err(ApiError::new(StatusCode::NOT_FOUND, "unknown_artifact", format!("no artifact kind `{other}`")))
        }
    };
    let contents = contents
        .filter(|c| !c.is_empty())
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "artifact_not_ready", format!("`{kind}` is not ready yet")))?;
    Ok(([(header::CONTENT_TYPE, mime)], contents).into_response())
}
