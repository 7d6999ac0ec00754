//! JSON-over-HTTP surface for interactive runs.
//!
//! | method | path | body / reply |
//! |---|---|---|
//! | GET | `/runs` | `[RunStatus]` |
//! | GET | `/runs/{id}` | `RunStatus` |
//! | GET | `/runs/{id}/steps?from=t` | `[StepRecord]` with `t >= from` |
//! | GET | `/runs/{id}/pending` | `PendingQuery` |
//! | POST | `/runs/{id}/labels` | `LabelSubmission` -> `StepRecord` |
//! | POST | `/runs/{id}/advance` | -> `AdvanceReply` |
//! | GET | `/runs/{id}/trace` | `[TraceRow]` |
//!
//! Failures reply `{code, message, detail}`.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use crate::config::{Labeler, Method};
use crate::error::MonitorError;
use crate::record::{StepRecord, Summary};
use crate::run::Run;
use crate::session::{Advance, LabelSubmission, PendingQuery, RunState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    pub code: String,
    pub message: String,
    pub detail: Option<serde_json::Value>,
}

pub struct HttpError {
    status: StatusCode,
    body: ApiError,
}

impl HttpError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self {
            status,
            body: ApiError {
                code: code.into(),
                message: message.into(),
                detail: None,
            },
        }
    }

    fn with_detail(mut self, detail: serde_json::Value) -> Self {
        self.body.detail = Some(detail);
        self
    }
}

impl From<MonitorError> for HttpError {
    fn from(e: MonitorError) -> Self {
        match e {
            MonitorError::Rejected { code, message } => {
                let status = match code {
                    "no_pending" => StatusCode::NOT_FOUND,
                    "invalid_labels" => StatusCode::UNPROCESSABLE_ENTITY,
                    _ => StatusCode::CONFLICT,
                };
                Self::new(status, code, message)
            }
            MonitorError::Numerical(e) => {
                Self::new(StatusCode::INTERNAL_SERVER_ERROR, "numerical_failure", e.to_string())
            }
            MonitorError::Config(m) => Self::new(StatusCode::BAD_REQUEST, "invalid_config", m),
            MonitorError::Data(m) => Self::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_data", m),
            other => Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", other.to_string()),
        }
    }
}

impl From<JsonRejection> for HttpError {
    fn from(r: JsonRejection) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", r.body_text())
    }
}

impl IntoResponse for HttpError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

type HttpResult<T> = Result<Json<T>, HttpError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunStatus {
    pub run_id: String,
    pub state: RunState,
    pub completed: usize,
    pub total_steps: usize,
    pub classes: usize,
    pub labeler: Labeler,
    pub methods: Vec<Method>,
    pub threshold: Option<f64>,
    pub n_interventions: usize,
    pub summary: Option<Summary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvanceReply {
    pub state: RunState,
    pub record: Option<StepRecord>,
    pub pending: Option<PendingQuery>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: usize,
    pub eps_hat: Option<f64>,
    pub l_hat: Option<f64>,
    pub shift_strength: Option<f64>,
    pub cumulative_bound: Option<f64>,
}

#[derive(Debug, Deserialize)]
pub struct StepsQuery {
    pub from: Option<usize>,
}

/// Runs served by one process. The set is fixed at startup; each run's
/// mutations go through its own lock, one at a time.
#[derive(Clone, Default)]
pub struct AppState {
    runs: Arc<BTreeMap<String, Arc<Mutex<Run>>>>,
}

impl AppState {
    pub fn new(runs: Vec<Run>) -> Self {
        let map = runs
            .into_iter()
            .map(|r| (r.session().config().run_id.clone(), Arc::new(Mutex::new(r))))
            .collect();
        Self { runs: Arc::new(map) }
    }

    fn get(&self, id: &str) -> Result<Arc<Mutex<Run>>, HttpError> {
        self.runs
            .get(id)
            .cloned()
            .ok_or_else(|| HttpError::new(StatusCode::NOT_FOUND, "not_found", format!("no run {id:?}")))
    }
}

fn status(run: &Run) -> RunStatus {
    let s = run.session();
    let state = s.state();
    RunStatus {
        run_id: s.config().run_id.clone(),
        state,
        completed: s.completed(),
        total_steps: s.total_steps(),
        classes: s.prepared().classes,
        labeler: s.config().labeler,
        methods: s.config().methods.clone(),
        threshold: s.config().policy.as_ref().map(|p| p.threshold),
        n_interventions: s.records().iter().filter(|r| r.intervention.triggered).count(),
        summary: (state == RunState::Done).then(|| s.summary()),
    }
}

fn lock(run: &Mutex<Run>) -> std::sync::MutexGuard<'_, Run> {
    run.lock().unwrap_or_else(|p| p.into_inner())
}

/// Runs `f` on the blocking pool with the run locked.
async fn with_run<T, F>(state: &AppState, id: &str, f: F) -> Result<T, HttpError>
where
    T: Send + 'static,
    F: FnOnce(&mut Run) -> Result<T, HttpError> + Send + 'static,
{
    let run = state.get(id)?;
    tokio::task::spawn_blocking(move || f(&mut lock(&run)))
        .await
        .map_err(|e| HttpError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
}

async fn list_runs(State(state): State<AppState>) -> HttpResult<Vec<RunStatus>> {
    Ok(Json(state.runs.values().map(|r| status(&lock(r))).collect()))
}

async fn get_run(State(state): State<AppState>, Path(id): Path<String>) -> HttpResult<RunStatus> {
    let run = state.get(&id)?;
    let s = status(&lock(&run));
    Ok(Json(s))
}

async fn get_steps(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<StepsQuery>,
) -> HttpResult<Vec<StepRecord>> {
    let run = state.get(&id)?;
    let from = q.from.unwrap_or(1).max(1);
    let recs = lock(&run).session().records().iter().skip(from - 1).cloned().collect();
    Ok(Json(recs))
}

async fn get_pending(State(state): State<AppState>, Path(id): Path<String>) -> HttpResult<PendingQuery> {
    let run = state.get(&id)?;
    let guard = lock(&run);
    match guard.session().pending() {
        Some(q) => Ok(Json(q.clone())),
        None => Err(HttpError::new(StatusCode::NOT_FOUND, "no_pending", "no label query is pending")
            .with_detail(serde_json::json!({ "state": guard.state() }))),
    }
}

async fn post_labels(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Result<Json<LabelSubmission>, JsonRejection>,
) -> HttpResult<StepRecord> {
    let Json(sub) = body?;
    with_run(&state, &id, move |run| {
        let pending_step = run.session().pending().map(|q| q.step);
        run.submit_labels(&sub).map(Json).map_err(|e| {
            HttpError::from(e).with_detail(serde_json::json!({ "pending_step": pending_step }))
        })
    })
    .await
}

async fn post_advance(State(state): State<AppState>, Path(id): Path<String>) -> HttpResult<AdvanceReply> {
    with_run(&state, &id, |run| {
        let out = run.advance().map_err(HttpError::from)?;
        let (record, pending) = match out {
            Advance::Completed(r) => (Some(r), None),
            Advance::AwaitingLabels(q) => (None, Some(q)),
        };
        Ok(Json(AdvanceReply {
            state: run.state(),
            record,
            pending,
        }))
    })
    .await
}

async fn get_trace(State(state): State<AppState>, Path(id): Path<String>) -> HttpResult<Vec<TraceRow>> {
    with_run(&state, &id, |run| {
        let prep = run.session().prepared().clone();
        let trace = prep.trace().map_err(HttpError::from)?;
        Ok(Json(
            trace
                .steps
                .iter()
                .map(|s| TraceRow {
                    t: s.t,
                    eps_hat: s.eps_hat,
                    l_hat: s.l_hat,
                    shift_strength: s.shift_strength,
                    cumulative_bound: s.cumulative_bound,
                })
                .collect(),
        ))
    })
    .await
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/runs", get(list_runs))
        .route("/runs/{id}", get(get_run))
        .route("/runs/{id}/steps", get(get_steps))
        .route("/runs/{id}/pending", get(get_pending))
        .route("/runs/{id}/labels", post(post_labels))
        .route("/runs/{id}/advance", post(post_advance))
        .route("/runs/{id}/trace", get(get_trace))
        .with_state(state)
}

/// Serves until ctrl-c.
pub async fn serve(state: AppState, listener: tokio::net::TcpListener) -> std::io::Result<()> {
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
