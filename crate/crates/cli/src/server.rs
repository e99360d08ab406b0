//! HTTP/JSON review service. Field names are documented in docs/api.md.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};

use taxo_core::service::{
    Clock, Condition, DecisionLog, DecisionRecord, NextPrompt, Prediction, PromptSet, Session,
    SessionError, SessionMetrics, TreeNode, Workspace, DEFAULT_BUDGET_MS,
};
use taxo_core::{Error, NodeId};

pub struct AppState {
    workspace: RwLock<Workspace>,
    prompt_sets: HashMap<Condition, PromptSet>,
    sessions: Mutex<HashMap<String, Arc<Mutex<Session>>>>,
    clock: Arc<dyn Clock>,
    log_dir: Option<PathBuf>,
    budget_ms: u64,
    counter: AtomicU64,
}

impl AppState {
    pub fn new(workspace: Workspace, clock: Arc<dyn Clock>) -> Self {
        AppState {
            workspace: RwLock::new(workspace),
            prompt_sets: HashMap::new(),
            sessions: Mutex::new(HashMap::new()),
            clock,
            log_dir: None,
            budget_ms: DEFAULT_BUDGET_MS,
            counter: AtomicU64::new(0),
        }
    }

    /// Sessions of `set`'s condition draw their prompts from it.
    pub fn with_prompt_set(mut self, set: PromptSet) -> Self {
        self.prompt_sets.insert(set.meta.condition, set);
        self
    }

    /// Write one append-only decision log per session into `dir`.
    pub fn with_log_dir(mut self, dir: PathBuf) -> Self {
        self.log_dir = Some(dir);
        self
    }

    pub fn with_budget_ms(mut self, budget_ms: u64) -> Self {
        self.budget_ms = budget_ms;
        self
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/graph/tree", get(tree))
        .route("/node/{id}/neighborhood", get(neighborhood))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/next", get(next_prompt))
        .route("/sessions/{id}/decisions", post(record_decision))
        .route("/sessions/{id}/metrics", get(metrics))
        .route("/predict", post(predict))
        .route("/attach", post(attach))
        .route("/reindex", post(reindex))
        .with_state(state)
}

// ---------------------------------------------------------------- errors

#[derive(Debug, Serialize)]
pub struct ApiError {
    #[serde(skip)]
    status: StatusCode,
    pub error: &'static str,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, error: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            error,
            message: message.into(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(&self)).into_response()
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        let (status, code) = match &e {
            SessionError::Expired => (StatusCode::GONE, "expired"),
            SessionError::Finished => (StatusCode::GONE, "finished"),
            SessionError::UnknownSession(_) => (StatusCode::NOT_FOUND, "unknown_session"),
            SessionError::UnknownPrompt(_) => (StatusCode::NOT_FOUND, "unknown_prompt"),
            SessionError::DuplicateDecision(_) => (StatusCode::CONFLICT, "duplicate_decision"),
            SessionError::NotIssued(_) => (StatusCode::CONFLICT, "not_issued"),
            SessionError::DummyChoice => (StatusCode::BAD_REQUEST, "dummy_choice"),
            SessionError::EmptyLog => (StatusCode::CONFLICT, "no_decisions"),
        };
        ApiError::new(status, code, e.to_string())
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let (status, code) = match &e {
            Error::Session(s) => return s.clone().into(),
            Error::UnknownNode(_) => (StatusCode::NOT_FOUND, "unknown_node"),
            Error::DuplicateLabel { .. } => (StatusCode::CONFLICT, "duplicate_label"),
            Error::InvalidInput(_) | Error::Parse { .. } | Error::DummyRootPresent => {
                (StatusCode::BAD_REQUEST, "invalid_input")
            }
            _ => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        if status == StatusCode::INTERNAL_SERVER_ERROR {
            tracing::error!(error = %e, "request failed");
        }
        ApiError::new(status, code, e.to_string())
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn node(id: u32) -> NodeId {
    NodeId(id)
}

// ---------------------------------------------------------------- graph

#[derive(Debug, Deserialize)]
pub struct TreeQuery {
    pub root: Option<u32>,
    pub depth: Option<u32>,
}

async fn tree(State(s): State<Arc<AppState>>, Query(q): Query<TreeQuery>) -> ApiResult<Json<TreeNode>> {
    let ws = s.workspace.read();
    Ok(Json(ws.tree(q.root.map(node), q.depth.unwrap_or(1))?))
}

#[derive(Debug, Deserialize)]
pub struct NeighborhoodQuery {
    pub h: Option<u32>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct NeighborEntry {
    pub id: NodeId,
    pub label: String,
    pub distance: u32,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Neighborhood {
    pub center: NodeId,
    pub label: String,
    pub h: u32,
    pub nodes: Vec<NeighborEntry>,
}

async fn neighborhood(
    State(s): State<Arc<AppState>>,
    Path(id): Path<u32>,
    Query(q): Query<NeighborhoodQuery>,
) -> ApiResult<Json<Neighborhood>> {
    let ws = s.workspace.read();
    let g = ws.graph();
    let center = node(id);
    g.check_node(center)?;
    let h = q.h.unwrap_or(ws.handle_radius);
    let dist = g.bfs_from(center, h);
    let mut nodes: Vec<NeighborEntry> = ws
        .neighborhood(center, h)?
        .into_iter()
        .filter(|&n| n != center)
        .map(|n| NeighborEntry {
            id: n,
            label: g.label(n).to_string(),
            distance: dist[n.index()].expect("inside the neighborhood"),
        })
        .collect();
    nodes.sort_by_key(|e| (e.distance, e.id));
    Ok(Json(Neighborhood {
        center,
        label: g.label(center).to_string(),
        h,
        nodes,
    }))
}

// ---------------------------------------------------------------- sessions

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    pub condition: Condition,
    /// Letters, digits, `-` and `_`; generated when absent.
    pub session_id: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SessionCreated {
    pub session_id: String,
    pub condition: Condition,
    pub total: usize,
    pub budget_ms: u64,
    pub started_ms: u64,
}

async fn create_session(
    State(s): State<Arc<AppState>>,
    Json(req): Json<CreateSession>,
) -> ApiResult<(StatusCode, Json<SessionCreated>)> {
    let set = s.prompt_sets.get(&req.condition).ok_or_else(|| {
        ApiError::new(
            StatusCode::NOT_FOUND,
            "no_prompt_set",
            format!("no prompt set loaded for condition {:?}", req.condition),
        )
    })?;
    let id = match req.session_id {
        Some(id) => {
            let valid = !id.is_empty()
                && id.len() <= 64
                && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_');
            if !valid {
                return Err(ApiError::new(
                    StatusCode::BAD_REQUEST,
                    "invalid_input",
                    "session_id must be 1-64 letters, digits, `-` or `_`",
                ));
            }
            id
        }
        None => format!("s{}", s.counter.fetch_add(1, Ordering::Relaxed) + 1),
    };
    let now = s.clock.now_ms();
    let mut sessions = s.sessions.lock();
    if sessions.contains_key(&id) {
        return Err(ApiError::new(
            StatusCode::CONFLICT,
            "duplicate_session",
            format!("session `{id}` already exists"),
        ));
    }
    let mut session = Session::new(id.clone(), set.prompts.clone(), now, s.budget_ms);
    if let Some(dir) = &s.log_dir {
        let log = DecisionLog::open(&dir.join(format!("{id}.jsonl")))?;
        session = session.with_log(log);
    }
    let total = session.prompts().len();
    sessions.insert(id.clone(), Arc::new(Mutex::new(session)));
    Ok((
        StatusCode::CREATED,
        Json(SessionCreated {
            session_id: id,
            condition: req.condition,
            total,
            budget_ms: s.budget_ms,
            started_ms: now,
        }),
    ))
}

fn session(s: &AppState, id: &str) -> ApiResult<Arc<Mutex<Session>>> {
    s.sessions
        .lock()
        .get(id)
        .cloned()
        .ok_or_else(|| SessionError::UnknownSession(id.to_string()).into())
}

async fn next_prompt(State(s): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<NextPrompt>> {
    let sess = session(&s, &id)?;
    // graph mutations hold the write lock, so no prompt is issued mid-attach
    let ws = s.workspace.read();
    let mut sess = sess.lock();
    Ok(Json(sess.next_prompt(ws.graph(), s.clock.now_ms())?))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecisionRequest {
    pub prompt_id: u32,
    pub chosen_id: NodeId,
}

/// What the reviewer sees after a decision: no truth fields.
#[derive(Debug, Serialize, Deserialize)]
pub struct DecisionAck {
    pub prompt_id: u32,
    pub chosen_id: NodeId,
    pub elapsed_ms: u64,
    pub ts: u64,
    pub score: i64,
    pub correct: usize,
    pub incorrect: usize,
    pub remaining_ms: u64,
    /// No prompts remain or the time budget is spent.
    pub closed: bool,
}

async fn record_decision(
    State(s): State<Arc<AppState>>,
    Path(id): Path<String>,
    Json(req): Json<DecisionRequest>,
) -> ApiResult<(StatusCode, Json<DecisionAck>)> {
    let sess = session(&s, &id)?;
    let ws = s.workspace.read();
    let mut sess = sess.lock();
    let now = s.clock.now_ms();
    let rec = sess.record_decision(ws.graph(), req.prompt_id, req.chosen_id, now)?;
    let (score, correct, incorrect) = sess.score();
    let closed = sess.is_closed(now) || sess.decisions().len() == sess.prompts().len();
    Ok((
        StatusCode::CREATED,
        Json(DecisionAck {
            prompt_id: rec.prompt_id,
            chosen_id: rec.chosen_id,
            elapsed_ms: rec.elapsed_ms,
            ts: rec.ts,
            score,
            correct,
            incorrect,
            remaining_ms: sess.remaining_ms(now),
            closed,
        }),
    ))
}

/// Post-session export: metrics by stratum and the full decision records.
#[derive(Debug, Serialize, Deserialize)]
pub struct SessionExport {
    pub session_id: String,
    pub metrics: SessionMetrics,
    pub decisions: Vec<DecisionRecord>,
}

async fn metrics(State(s): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<SessionExport>> {
    let sess = session(&s, &id)?;
    let sess = sess.lock();
    let open = !sess.is_closed(s.clock.now_ms()) && sess.decisions().len() < sess.prompts().len();
    if open {
        // per-stratum numbers would reveal which suggestions were correct
        return Err(ApiError::new(
            StatusCode::CONFLICT,
            "session_open",
            "metrics are exported once the session has ended",
        ));
    }
    Ok(Json(SessionExport {
        session_id: id,
        metrics: sess.metrics()?,
        decisions: sess.decisions().to_vec(),
    }))
}

// ---------------------------------------------------------------- curation

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictRequest {
    pub text: String,
    pub k: Option<usize>,
}

async fn predict(State(s): State<Arc<AppState>>, Json(req): Json<PredictRequest>) -> ApiResult<Json<Prediction>> {
    let ws = s.workspace.read();
    Ok(Json(ws.predict(&req.text, req.k.unwrap_or(5))?))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttachRequest {
    pub label: String,
    pub parent_id: NodeId,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Attached {
    pub id: NodeId,
    pub label: String,
    pub parent_id: NodeId,
    /// Not yet a candidate; becomes one after re-indexing.
    pub pending: bool,
}

async fn attach(
    State(s): State<Arc<AppState>>,
    Json(req): Json<AttachRequest>,
) -> ApiResult<(StatusCode, Json<Attached>)> {
    let mut ws = s.workspace.write();
    let id = ws.attach(&req.label, req.parent_id)?;
    Ok((
        StatusCode::CREATED,
        Json(Attached {
            id,
            label: ws.graph().label(id).to_string(),
            parent_id: req.parent_id,
            pending: true,
        }),
    ))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Reindexed {
    pub admitted: usize,
    pub nodes: usize,
    pub candidates: usize,
    pub diameter: u32,
}

async fn reindex(State(s): State<Arc<AppState>>) -> ApiResult<Json<Reindexed>> {
    let mut ws = s.workspace.write();
    let admitted = ws.reindex()?;
    Ok(Json(Reindexed {
        admitted,
        nodes: ws.graph().len() - 1,
        candidates: ws.candidates().len(),
        diameter: ws.distances().diameter(),
    }))
}
