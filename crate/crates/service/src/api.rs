use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::{SystemTime, UNIX_EPOCH};

use annopipe::corpus::Verdict;
use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;

use crate::store::{LabelSubmission, Store};
use crate::ServiceError;

/// Header carrying the annotator id when the query or body does not.
pub const ANNOTATOR_HEADER: &str = "x-annotator-id";
pub const MAX_TASKS: usize = 1000;

#[derive(Clone)]
pub struct AppState {
    store: Arc<Mutex<Store>>,
    selecting: Arc<AtomicBool>,
}

impl AppState {
    pub fn new(store: Store) -> Self {
        Self { store: Arc::new(Mutex::new(store)), selecting: Arc::new(AtomicBool::new(false)) }
    }

    /// A poisoned lock still guards consistent state: commits validate
    /// before they write.
    pub fn lock(&self) -> MutexGuard<'_, Store> {
        self.store.lock().unwrap_or_else(|p| p.into_inner())
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        use ServiceError::*;
        let status = match &self {
            BadRequest(_) | Corpus(_) => StatusCode::BAD_REQUEST,
            UnknownTweet(_) | UnknownLot(_) | NotInDiscussion(_) => StatusCode::NOT_FOUND,
            NotAssigned { .. } => StatusCode::FORBIDDEN,
            AlreadyLabeled(_) | LotOpen { .. } | Incomplete { .. } | NoBatch | PoolExhausted | Busy | Stale => StatusCode::CONFLICT,
            Qc(_) | Loop(_) | NothingSelected => StatusCode::UNPROCESSABLE_ENTITY,
            Config(_) | Io(_) | Corrupt { .. } | Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let mut body = json!({ "error": self.to_string() });
        if let Incomplete { remaining } = self {
            body["remaining"] = json!(remaining);
        }
        (status, Json(body)).into_response()
    }
}

fn now_secs() -> i64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs() as i64)
}

fn annotator(explicit: Option<String>, headers: &HeaderMap) -> Result<String, ServiceError> {
    explicit
        .filter(|s| !s.is_empty())
        .or_else(|| headers.get(ANNOTATOR_HEADER).and_then(|v| v.to_str().ok()).map(str::to_string))
        .filter(|s| !s.is_empty())
        .ok_or_else(|| ServiceError::BadRequest("missing annotator id".into()))
}

/// Labels arrive as `true`/`false` or `1`/`0`.
#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(untagged)]
pub enum LabelValue {
    Bool(bool),
    Int(u8),
}

impl LabelValue {
    fn to_bool(self) -> Result<bool, ServiceError> {
        match self {
            LabelValue::Bool(b) => Ok(b),
            LabelValue::Int(0) => Ok(false),
            LabelValue::Int(1) => Ok(true),
            LabelValue::Int(n) => Err(ServiceError::BadRequest(format!("label value {n} is not 0 or 1"))),
        }
    }
}

#[derive(Deserialize)]
struct TasksQuery {
    annotator: Option<String>,
    n: Option<usize>,
}

#[derive(Deserialize)]
struct LabelBody {
    annotator_id: Option<String>,
    tweet_id: String,
    value: Option<LabelValue>,
    #[serde(default)]
    unsure: bool,
    timestamp: Option<i64>,
}

#[derive(Deserialize)]
struct ResolveBody {
    value: LabelValue,
    note: Option<String>,
    timestamp: Option<i64>,
}

#[derive(Deserialize)]
struct VerdictBody {
    verdicts: BTreeMap<String, Verdict>,
    note: Option<String>,
    timestamp: Option<i64>,
}

#[derive(Deserialize)]
struct ExportQuery {
    test_fraction: Option<f64>,
}

async fn tasks(State(app): State<AppState>, headers: HeaderMap, Query(q): Query<TasksQuery>) -> Result<Response, ServiceError> {
    let ann = annotator(q.annotator, &headers)?;
    let n = q.n.unwrap_or(20).min(MAX_TASKS);
    Ok(Json(app.lock().next_tasks(&ann, n)?).into_response())
}

async fn labels(State(app): State<AppState>, headers: HeaderMap, Json(b): Json<LabelBody>) -> Result<Response, ServiceError> {
    let annotator_id = annotator(b.annotator_id, &headers)?;
    let value = b.value.map(LabelValue::to_bool).transpose()?;
    let sub = LabelSubmission { annotator_id, tweet_id: b.tweet_id, value, unsure: b.unsure };
    let ack = app.lock().submit_label(sub, b.timestamp.unwrap_or_else(now_secs))?;
    Ok((StatusCode::CREATED, Json(ack)).into_response())
}

async fn discussion(State(app): State<AppState>) -> Response {
    Json(app.lock().discussion()).into_response()
}

async fn resolve(State(app): State<AppState>, Path(id): Path<String>, Json(b): Json<ResolveBody>) -> Result<Response, ServiceError> {
    let value = b.value.to_bool()?;
    app.lock().resolve(&id, value, b.note, b.timestamp.unwrap_or_else(now_secs))?;
    Ok(Json(json!({ "tweet_id": id, "value": value })).into_response())
}

async fn lots(State(app): State<AppState>) -> Response {
    Json(app.lock().lots()).into_response()
}

async fn lot_sample(State(app): State<AppState>, Path(id): Path<String>) -> Result<Response, ServiceError> {
    Ok(Json(app.lock().lot_sample(&id)?).into_response())
}

async fn lot_verdicts(State(app): State<AppState>, Path(id): Path<String>, Json(b): Json<VerdictBody>) -> Result<Response, ServiceError> {
    let out = app.lock().submit_verdicts(&id, b.verdicts, b.note, b.timestamp.unwrap_or_else(now_secs))?;
    Ok(Json(out).into_response())
}

/// Training runs on a blocking thread with the store unlocked; the result
/// is committed only if no other batch was opened meanwhile.
async fn next_batch(State(app): State<AppState>) -> Result<Response, ServiceError> {
    if app.selecting.swap(true, Ordering::SeqCst) {
        return Err(ServiceError::Busy);
    }
    let result = async {
        let job = app.lock().prepare_next_batch()?;
        let prepared = tokio::task::spawn_blocking(move || job.run()).await.map_err(|e| ServiceError::Internal(e.to_string()))??;
        app.lock().commit_batch(prepared)
    }
    .await;
    app.selecting.store(false, Ordering::SeqCst);
    Ok((StatusCode::CREATED, Json(result?)).into_response())
}

async fn stats(State(app): State<AppState>) -> Response {
    Json(app.lock().stats()).into_response()
}

async fn export(State(app): State<AppState>, Query(q): Query<ExportQuery>) -> Result<Response, ServiceError> {
    Ok(Json(app.lock().export(q.test_fraction)?).into_response())
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(|| async { "ok" }))
        .route("/tasks", get(tasks))
        .route("/labels", post(labels))
        .route("/discussion", get(discussion))
        .route("/discussion/{tweet_id}", post(resolve))
        .route("/lots", get(lots))
        .route("/lots/{id}/sample", get(lot_sample))
        .route("/lots/{id}/verdicts", post(lot_verdicts))
        .route("/pipeline/next-batch", post(next_batch))
        .route("/stats", get(stats))
        .route("/export", get(export))
        .with_state(state)
}
