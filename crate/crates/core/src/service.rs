//! HTTP JSON API over a [`Project`].
//!
//! All writes go through one mutex-guarded [`Workflow`](crate::workflow::Workflow),
//! so every mutation becomes exactly one logged event. Errors share the
//! envelope `{"code", "message", "detail"}`.

use std::sync::{Arc, Mutex, MutexGuard};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::corpus::Layer;
use crate::gateway::ModelJudgment;
use crate::metrics::{agreement_report_for, classification_report, MetricReport};
use crate::project::{ApiRole, Project, ProjectError};
use crate::schema::{binary_map, LabelValues, Violation};
use crate::workflow::{parse_task_id, task_id, TaskRecord, WorkflowError, DEMOGRAPHIC_GROUP, DIET_PERSONALITY_GROUP};

pub const PAGE_SIZE: usize = 50;

#[derive(Debug, Clone, Serialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: StatusCode,
    pub code: String,
    pub message: String,
    pub detail: Value,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        ApiError { status, code: code.into(), message: message.into(), detail: Value::Null }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(&self)).into_response()
    }
}

impl From<WorkflowError> for ApiError {
    fn from(e: WorkflowError) -> Self {
        use WorkflowError as W;
        let message = e.to_string();
        let (status, code, detail) = match &e {
            W::Gating { batch, instance } => {
                (StatusCode::CONFLICT, "gating_error", json!({ "task_id": task_id(batch, instance) }))
            }
            W::UnknownBatch(_) | W::UnknownTask { .. } | W::UnknownInstance(_) => {
                (StatusCode::NOT_FOUND, "not_found", Value::Null)
            }
            W::AlreadyJudged { .. } => (StatusCode::CONFLICT, "already_judged", Value::Null),
            W::InvalidTaskState { state, .. } => {
                (StatusCode::CONFLICT, "invalid_task_state", json!({ "state": state }))
            }
            W::InvalidBatchState { state, .. } => {
                (StatusCode::CONFLICT, "invalid_batch_state", json!({ "state": state }))
            }
            W::AnnotatorConflict { language, assigned } => {
                (StatusCode::CONFLICT, "annotator_conflict", json!({ "language": language, "assigned": assigned }))
            }
            W::NotAdjudicable { .. } => (StatusCode::CONFLICT, "not_adjudicable", Value::Null),
            W::FinalizeBlocked(blocked) => (StatusCode::CONFLICT, "finalize_blocked", json!({ "blocked": blocked })),
            W::SequenceConflict { .. } | W::DuplicateBatch(_) => (StatusCode::CONFLICT, "conflict", Value::Null),
            W::SchemaViolation(v) => (StatusCode::UNPROCESSABLE_ENTITY, "schema_violation", json!({ "violations": v })),
            W::MissingLabels(labels) => {
                (StatusCode::UNPROCESSABLE_ENTITY, "missing_labels", json!({ "labels": labels }))
            }
            W::MissingOverrideNote => (StatusCode::UNPROCESSABLE_ENTITY, "missing_note", Value::Null),
            W::LabelNotInBatch(_)
            | W::EmptyNote
            | W::BadFraction(_)
            | W::EmptyLabelGroup
            | W::EmptyBatch
            | W::DuplicateLabel(_)
            | W::Schema(_) => (StatusCode::UNPROCESSABLE_ENTITY, "validation_error", Value::Null),
            W::Corpus(_) | W::Io(_) | W::CorruptLog { .. } | W::Replay { .. } => {
                (StatusCode::INTERNAL_SERVER_ERROR, "internal", Value::Null)
            }
        };
        ApiError { status, code: code.into(), message, detail }
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        ApiError::bad_request(e.body_text())
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

pub struct AppState {
    project: Mutex<Project>,
}

impl AppState {
    pub fn new(project: Project) -> Arc<Self> {
        Arc::new(AppState { project: Mutex::new(project) })
    }

    fn lock(&self) -> MutexGuard<'_, Project> {
        self.project.lock().unwrap_or_else(|p| p.into_inner())
    }
}

#[derive(Debug, Clone)]
struct Session {
    actor: String,
    role: ApiRole,
}

fn authorize(project: &Project, headers: &HeaderMap, allowed: &[ApiRole]) -> Result<Session, ApiError> {
    let token = headers
        .get(axum::http::header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
        .ok_or_else(|| ApiError::new(StatusCode::UNAUTHORIZED, "unauthorized", "missing bearer token"))?;
    let entry = project
        .config
        .token(token.trim())
        .ok_or_else(|| ApiError::new(StatusCode::UNAUTHORIZED, "unauthorized", "unknown token"))?;
    if entry.role != ApiRole::Admin && !allowed.contains(&entry.role) {
        return Err(ApiError::new(
            StatusCode::FORBIDDEN,
            "forbidden",
            format!("role {:?} may not call this endpoint", entry.role),
        ));
    }
    Ok(Session { actor: entry.actor.clone(), role: entry.role })
}

fn split_task(id: &str) -> Result<(String, String), ApiError> {
    parse_task_id(id)
        .map(|(b, i)| (b.to_string(), i.to_string()))
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "not_found", format!("malformed task id `{id}`")))
}

const ANY: &[ApiRole] = &[ApiRole::Annotator, ApiRole::Adjudicator];
const ANNOTATOR: &[ApiRole] = &[ApiRole::Annotator];
const ADJUDICATOR: &[ApiRole] = &[ApiRole::Adjudicator];
const ADMIN: &[ApiRole] = &[];

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/batches", get(list_batches).post(create_batch))
        .route("/batches/{id}/next-task", get(next_task))
        .route("/batches/{id}/adjudication-queue", get(adjudication_queue))
        .route("/batches/{id}/progress", get(progress))
        .route("/batches/{id}/qc", post(start_qc))
        .route("/batches/{id}/audit", post(audit))
        .route("/batches/{id}/finalize", post(finalize))
        .route("/tasks/{id}", get(get_task))
        .route("/tasks/{id}/judgment", post(submit_judgment))
        .route("/tasks/{id}/reveal", post(reveal))
        .route("/tasks/{id}/flag", post(flag))
        .route("/tasks/{id}/adjudicate", post(adjudicate))
        .route("/reports/metrics", get(metrics_report))
        .route("/reports/kappa", get(kappa_report))
        .fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint") })
        .with_state(state)
}

/// Bind and serve until interrupted.
pub async fn serve(project: Project, port: u16) -> Result<(), ProjectError> {
    let state = AppState::new(project);
    let addr = std::net::SocketAddr::from(([127, 0, 0, 1], port));
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|source| ProjectError::Io { path: addr.to_string(), source })?;
    eprintln!("listening on http://{addr}");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|source| ProjectError::Io { path: addr.to_string(), source })
}

#[derive(Serialize)]
struct BatchSummary {
    batch_id: String,
    label_group: Vec<String>,
    state: crate::workflow::BatchState,
    total: usize,
    awaiting_adjudication: usize,
}

async fn list_batches(State(s): State<Arc<AppState>>, headers: HeaderMap) -> ApiResult<Vec<BatchSummary>> {
    let p = s.lock();
    authorize(&p, &headers, ANY)?;
    Ok(Json(
        p.workflow
            .batches()
            .map(|b| BatchSummary {
                batch_id: b.batch_id.clone(),
                label_group: b.label_group.clone(),
                state: b.state,
                total: b.tasks.len(),
                awaiting_adjudication: b.tasks.values().filter(|t| t.needs_adjudication()).count(),
            })
            .collect(),
    ))
}

#[derive(Deserialize)]
struct CreateBatchBody {
    instance_ids: Vec<String>,
    #[serde(default)]
    labels: Option<Vec<String>>,
    #[serde(default)]
    group: Option<String>,
}

pub fn group_labels(group: &str) -> Option<Vec<String>> {
    let labels: &[&str] = match group {
        "demographic" => &DEMOGRAPHIC_GROUP,
        "diet" | "diet_personality" => &DIET_PERSONALITY_GROUP,
        _ => return None,
    };
    Some(labels.iter().map(|s| s.to_string()).collect())
}

async fn create_batch(
    State(s): State<Arc<AppState>>,
    headers: HeaderMap,
    body: Result<Json<CreateBatchBody>, JsonRejection>,
) -> ApiResult<Value> {
    let mut guard = s.lock();
    let session = authorize(&guard, &headers, ADMIN)?;
    let Json(body) = body?;
    let labels = match (body.labels, body.group.as_deref()) {
        (Some(l), None) => l,
        (None, Some(g)) => group_labels(g).ok_or_else(|| ApiError::bad_request(format!("unknown group `{g}`")))?,
        _ => return Err(ApiError::bad_request("give exactly one of `labels` or `group`")),
    };
    let p = &mut *guard;
    let batch =
        p.workflow.create_batch(&session.actor, body.instance_ids.iter().map(String::as_str), &labels, &p.corpus)?;
    Ok(Json(json!({ "batch_id": batch.batch_id, "total": batch.tasks.len() })))
}

#[derive(Serialize)]
struct LabelView {
    id: String,
    definition: String,
}

#[derive(Serialize)]
struct TaskView {
    task_id: String,
    batch_id: String,
    instance_id: String,
    text: String,
    language: String,
    labels: Vec<LabelView>,
    state: crate::workflow::TaskState,
    #[serde(with = "binary_map::option", skip_serializing_if = "Option::is_none")]
    human_values: Option<LabelValues>,
    warnings: Vec<Violation>,
}

fn task_view(p: &Project, t: &TaskRecord) -> Result<TaskView, ApiError> {
    let batch = p.workflow.batch(&t.batch_id)?;
    let text = p.corpus.instance(&t.instance_id).map(|i| i.text.clone()).unwrap_or_default();
    Ok(TaskView {
        task_id: t.task_id(),
        batch_id: t.batch_id.clone(),
        instance_id: t.instance_id.clone(),
        text,
        language: t.language.clone(),
        labels: batch
            .label_group
            .iter()
            .map(|l| LabelView {
                id: l.clone(),
                definition: p.schema.definition(l).map(|d| d.definition.clone()).unwrap_or_default(),
            })
            .collect(),
        state: t.state,
        human_values: t.human_values.clone(),
        warnings: t.warnings.clone(),
    })
}

async fn next_task(State(s): State<Arc<AppState>>, Path(id): Path<String>, headers: HeaderMap) -> ApiResult<Value> {
    let p = s.lock();
    let session = authorize(&p, &headers, ANNOTATOR)?;
    let task = p.workflow.next_task(&id, &session.actor)?;
    let view = task.map(|t| task_view(&p, t)).transpose()?;
    Ok(Json(json!({ "task": view })))
}

async fn get_task(State(s): State<Arc<AppState>>, Path(id): Path<String>, headers: HeaderMap) -> ApiResult<TaskView> {
    let p = s.lock();
    authorize(&p, &headers, ANY)?;
    let (b, i) = split_task(&id)?;
    let t = p.workflow.task(&b, &i)?;
    Ok(Json(task_view(&p, t)?))
}

#[derive(Deserialize)]
struct JudgmentBody {
    #[serde(with = "binary_map")]
    values: LabelValues,
}

async fn submit_judgment(
    State(s): State<Arc<AppState>>,
    Path(id): Path<String>,
    headers: HeaderMap,
    body: Result<Json<JudgmentBody>, JsonRejection>,
) -> ApiResult<TaskView> {
    let mut p = s.lock();
    let session = authorize(&p, &headers, ANNOTATOR)?;
    let Json(body) = body?;
    let (b, i) = split_task(&id)?;
    let t = p.workflow.submit_judgment(&b, &i, &session.actor, &body.values)?.clone();
    Ok(Json(task_view(&p, &t)?))
}

#[derive(Serialize)]
struct RevealView {
    task_id: String,
    judgments: Vec<ModelJudgment>,
}

async fn reveal(State(s): State<Arc<AppState>>, Path(id): Path<String>, headers: HeaderMap) -> ApiResult<RevealView> {
    let mut guard = s.lock();
    let session = authorize(&guard, &headers, ANY)?;
    let (b, i) = split_task(&id)?;
    let p = &mut *guard;
    let judgments = p.workflow.reveal_model(&b, &i, &session.actor, &p.judgments)?;
    Ok(Json(RevealView { task_id: id, judgments }))
}

#[derive(Deserialize)]
struct FlagBody {
    note: String,
}

async fn flag(
    State(s): State<Arc<AppState>>,
    Path(id): Path<String>,
    headers: HeaderMap,
    body: Result<Json<FlagBody>, JsonRejection>,
) -> ApiResult<TaskRecord> {
    let mut p = s.lock();
    let session = authorize(&p, &headers, ANNOTATOR)?;
    let Json(body) = body?;
    let (b, i) = split_task(&id)?;
    Ok(Json(p.workflow.flag(&b, &i, &session.actor, &body.note)?.clone()))
}

#[derive(Deserialize)]
struct QueueQuery {
    #[serde(default)]
    cursor: Option<String>,
}

#[derive(Serialize)]
struct LabelDiff {
    label: String,
    human: Option<u8>,
    model: Option<u8>,
    agree: bool,
}

#[derive(Serialize)]
struct QueueItem {
    #[serde(flatten)]
    task: TaskView,
    flags: Vec<crate::workflow::FlagNote>,
    audited: bool,
    diff: Vec<LabelDiff>,
    model: Vec<ModelJudgment>,
}

#[derive(Serialize)]
struct QueuePage {
    items: Vec<QueueItem>,
    next_cursor: Option<String>,
    total: usize,
}

async fn adjudication_queue(
    State(s): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<QueueQuery>,
    headers: HeaderMap,
) -> ApiResult<QueuePage> {
    let p = s.lock();
    authorize(&p, &headers, ADJUDICATOR)?;
    let queue = p.workflow.adjudication_queue(&id)?;
    let start = match &q.cursor {
        None => 0,
        Some(c) => queue
            .iter()
            .position(|t| &t.instance_id == c)
            .ok_or_else(|| ApiError::bad_request(format!("cursor `{c}` is not in the queue")))?,
    };
    let page: Vec<&TaskRecord> = queue.iter().skip(start).take(PAGE_SIZE).copied().collect();
    let next_cursor = queue.get(start + PAGE_SIZE).map(|t| t.instance_id.clone());
    let batch = p.workflow.batch(&id)?;
    let mut items = Vec::new();
    for t in page {
        let model: Vec<ModelJudgment> =
            batch.label_group.iter().filter_map(|l| p.judgments.get(&t.instance_id, l).cloned()).collect();
        let diff = batch
            .label_group
            .iter()
            .map(|l| {
                let human = t.human_values.as_ref().and_then(|v| v.get(l)).map(|&b| u8::from(b));
                let model = p.judgments.get(&t.instance_id, l).map(|j| u8::from(j.score));
                LabelDiff { label: l.clone(), human, model, agree: human == model }
            })
            .collect();
        items.push(QueueItem { task: task_view(&p, t)?, flags: t.flags.clone(), audited: t.audited, diff, model });
    }
    Ok(Json(QueuePage { items, next_cursor, total: queue.len() }))
}

#[derive(Deserialize)]
struct AdjudicateBody {
    #[serde(default, with = "binary_map::option")]
    decision: Option<LabelValues>,
    #[serde(default)]
    note: String,
}

async fn adjudicate(
    State(s): State<Arc<AppState>>,
    Path(id): Path<String>,
    headers: HeaderMap,
    body: Result<Json<AdjudicateBody>, JsonRejection>,
) -> ApiResult<TaskRecord> {
    let mut p = s.lock();
    let session = authorize(&p, &headers, ADJUDICATOR)?;
    let Json(body) = body?;
    let (b, i) = split_task(&id)?;
    let task = p.workflow.task(&b, &i)?;
    if session.role != ApiRole::Admin && task.annotator.as_deref() == Some(session.actor.as_str()) {
        return Err(ApiError::new(StatusCode::FORBIDDEN, "forbidden", "cannot adjudicate your own judgment"));
    }
    Ok(Json(p.workflow.adjudicate(&b, &i, &session.actor, body.decision.as_ref(), &body.note)?.clone()))
}

/// Agreement of the original layer with the values standing in the batch now.
fn running_kappa(p: &Project, batch_id: &str) -> Result<MetricReport, ApiError> {
    let batch = p.workflow.batch(batch_id)?;
    let mut subset = p.corpus.subset(batch.instance_ids.iter().map(String::as_str));
    for (id, values) in p.workflow.current_values(batch_id)? {
        subset
            .set_values(&id, Layer::Final, &values, "current", None)
            .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?;
    }
    let judged = batch.tasks.values().filter(|t| t.human_values.is_some()).map(|t| t.instance_id.as_str());
    Ok(agreement_report_for(&subset.subset(judged), &batch.label_group, Layer::Original, Layer::Final))
}

async fn progress(State(s): State<Arc<AppState>>, Path(id): Path<String>, headers: HeaderMap) -> ApiResult<Value> {
    let p = s.lock();
    authorize(&p, &headers, ANY)?;
    let progress = p.workflow.progress(&id)?;
    let kappa = running_kappa(&p, &id)?;
    Ok(Json(json!({ "progress": progress, "kappa": kappa })))
}

async fn start_qc(State(s): State<Arc<AppState>>, Path(id): Path<String>, headers: HeaderMap) -> ApiResult<Value> {
    let mut p = s.lock();
    let session = authorize(&p, &headers, ADMIN)?;
    let b = p.workflow.start_qc(&id, &session.actor)?;
    Ok(Json(json!({ "batch_id": b.batch_id, "state": b.state })))
}

#[derive(Deserialize)]
struct AuditBody {
    fraction: f64,
    #[serde(default)]
    targeted: bool,
    #[serde(default)]
    seed: u64,
}

async fn audit(
    State(s): State<Arc<AppState>>,
    Path(id): Path<String>,
    headers: HeaderMap,
    body: Result<Json<AuditBody>, JsonRejection>,
) -> ApiResult<Value> {
    let mut guard = s.lock();
    let session = authorize(&guard, &headers, ADMIN)?;
    let Json(body) = body?;
    let p = &mut *guard;
    let selected =
        p.workflow.audit_sample(&id, &session.actor, body.fraction, body.targeted, body.seed, &p.judgments)?;
    Ok(Json(json!({ "selected": selected })))
}

async fn finalize(State(s): State<Arc<AppState>>, Path(id): Path<String>, headers: HeaderMap) -> ApiResult<Value> {
    let mut guard = s.lock();
    let session = authorize(&guard, &headers, ADMIN)?;
    let p = &mut *guard;
    let outcome = p.workflow.finalize_batch(&id, &session.actor, &mut p.corpus)?;
    Ok(Json(serde_json::to_value(outcome).expect("outcome serializes")))
}

#[derive(Deserialize)]
struct MetricsQuery {
    #[serde(default = "model_layer")]
    pred_layer: String,
    #[serde(default = "final_layer")]
    gold_layer: String,
    #[serde(default)]
    format: Option<String>,
}

#[derive(Deserialize)]
struct KappaQuery {
    #[serde(default = "original_layer")]
    layer_a: String,
    #[serde(default = "final_layer")]
    layer_b: String,
    #[serde(default)]
    format: Option<String>,
}

fn model_layer() -> String {
    "model".into()
}

fn final_layer() -> String {
    "final".into()
}

fn original_layer() -> String {
    "original".into()
}

fn layer(s: &str) -> Result<Layer, ApiError> {
    s.parse().map_err(|_| ApiError::bad_request(format!("unknown layer `{s}`")))
}

fn render(report: MetricReport, format: Option<&str>, matrix_metric: &str) -> Result<Response, ApiError> {
    match format.unwrap_or("json") {
        "json" => Ok(Json(report).into_response()),
        "csv" => Ok(([("content-type", "text/csv")], report.to_matrix_csv(matrix_metric)).into_response()),
        "long" => Ok(([("content-type", "text/csv")], report.to_csv()).into_response()),
        other => Err(ApiError::bad_request(format!("unknown format `{other}`"))),
    }
}

async fn metrics_report(
    State(s): State<Arc<AppState>>,
    Query(q): Query<MetricsQuery>,
    headers: HeaderMap,
) -> Result<Response, ApiError> {
    let p = s.lock();
    authorize(&p, &headers, ANY)?;
    let report = classification_report(&p.corpus, &p.schema, layer(&q.pred_layer)?, layer(&q.gold_layer)?);
    render(report, q.format.as_deref(), "f1")
}

async fn kappa_report(
    State(s): State<Arc<AppState>>,
    Query(q): Query<KappaQuery>,
    headers: HeaderMap,
) -> Result<Response, ApiError> {
    let p = s.lock();
    authorize(&p, &headers, ANY)?;
    let report = crate::metrics::agreement_report(&p.corpus, &p.schema, layer(&q.layer_a)?, layer(&q.layer_b)?);
    render(report, q.format.as_deref(), "kappa")
}
