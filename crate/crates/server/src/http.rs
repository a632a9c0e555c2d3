//! HTTP surfaces: the platform API for principals and the worker endpoints for sandboxes.
//! They listen on separate sockets.

use std::str::FromStr;
use std::sync::Arc;
use std::time::Duration as StdDuration;

use axum::async_trait;
use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, FromRequest, FromRequestParts, Path, Query, Request, State};
use axum::http::header::{AUTHORIZATION, CONTENT_TYPE};
use axum::http::request::Parts;
use axum::http::HeaderMap;
use axum::response::IntoResponse;
use axum::routing::{get, post, put};
use axum::{Json, Router};
use chrono::{Duration, Utc};
use serde::de::DeserializeOwned;
use serde::Deserialize;

use seclab_core::analytics::DataSeries;
use seclab_core::api::{
    ApplicationRequest, DatasetUpload, GrantRequest, Health, JobRequest, KeyIssued, KeyRequest, Page, ValidationReport,
    WorkflowRequest, PAGE_SIZE,
};
use seclab_core::crypto::channel::{decode_frame, encode_frame, seal_key_material};
use seclab_core::crypto::{KeyReleaseRequest, SharingAgreement};
use seclab_core::dataprep::Schema;
use seclab_core::ids::{AgreementId, ApplicationId, DatasetId, JobId, PrincipalId, SandboxId, SpaceId, WorkflowId};
use seclab_core::orchestrator::{SandboxDescriptor, SandboxState};
use seclab_core::protocol::{
    Heartbeat, HeartbeatAck, KeyReleaseReply, ObjectRef, PollResponse, ProgressAck, ProgressReport, RegisterAck,
    RegisterRequest, UploadReceipt,
};
use seclab_core::scheduler::{ApplicationRecord, JobRecord, WorkflowDefinition};
use seclab_core::storage::{DatasetDescriptor, ObjectPath};
use seclab_core::token::BearerToken;

use crate::error::ApiError;
use crate::state::Platform;

type AppState = State<Arc<Platform>>;
type ApiResult<T> = Result<Json<T>, ApiError>;

/// Upper bound on a request body; datasets arrive base64-encoded in JSON.
const BODY_LIMIT: usize = 512 * 1024 * 1024;

/// How long a plan poll waits before returning empty.
pub const POLL_WAIT: StdDuration = StdDuration::from_secs(2);

fn bearer(headers: &HeaderMap) -> Option<BearerToken> {
    let v = headers.get(AUTHORIZATION)?.to_str().ok()?;
    v.strip_prefix("Bearer ")?.trim().parse().ok()
}

/// An authenticated principal.
pub struct Caller {
    pub id: PrincipalId,
    pub token: BearerToken,
}

#[async_trait]
impl FromRequestParts<Arc<Platform>> for Caller {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &Arc<Platform>) -> Result<Self, ApiError> {
        let token = bearer(&parts.headers).ok_or_else(|| ApiError::unauthorized("unauthenticated", "missing bearer token"))?;
        let id = state.authenticate(&token, Utc::now())?;
        Ok(Self { id, token })
    }
}

/// An authenticated sandbox worker.
pub struct SandboxCaller {
    pub sandbox: SandboxDescriptor,
    pub token: BearerToken,
}

#[async_trait]
impl FromRequestParts<Arc<Platform>> for SandboxCaller {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &Arc<Platform>) -> Result<Self, ApiError> {
        let token = bearer(&parts.headers).ok_or_else(|| ApiError::unauthorized("bad-token", "missing sandbox token"))?;
        let sandbox = state
            .orchestrator
            .authenticate(&token)
            .ok_or_else(|| ApiError::unauthorized("bad-token", "unknown or revoked sandbox token"))?;
        Ok(Self { sandbox, token })
    }
}

/// JSON body whose rejections use the platform error format.
pub struct Body<T>(pub T);

#[async_trait]
impl<S: Send + Sync, T: DeserializeOwned> FromRequest<S> for Body<T> {
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, ApiError> {
        match Json::<T>::from_request(req, state).await {
            Ok(Json(v)) => Ok(Body(v)),
            Err(r) => Err(ApiError::bad_request("invalid-request", r.body_text())),
        }
    }
}

fn parse_id<T: FromStr>(what: &str, raw: &str) -> Result<T, ApiError> {
    raw.parse().map_err(|_| ApiError::bad_request("invalid-id", format!("{raw:?} is not a {what} id")))
}

#[derive(Deserialize)]
struct ListQuery {
    cursor: Option<String>,
    owner: Option<String>,
}

/// Pages of `PAGE_SIZE` items. The cursor is an opaque hex offset.
fn paginate<T>(items: Vec<T>, cursor: Option<&str>) -> Result<Page<T>, ApiError> {
    let start = match cursor {
        None => 0,
        Some(c) => hex::decode(c)
            .ok()
            .and_then(|b| <[u8; 8]>::try_from(b).ok())
            .map(|b| u64::from_be_bytes(b) as usize)
            .ok_or_else(|| ApiError::bad_request("invalid-cursor", format!("{c:?} is not a cursor")))?,
    };
    let total = items.len();
    let end = start.saturating_add(PAGE_SIZE).min(total);
    let next_cursor = (end < total).then(|| hex::encode((end as u64).to_be_bytes()));
    Ok(Page { items: items.into_iter().skip(start).take(PAGE_SIZE).collect(), next_cursor })
}

pub fn api_router(platform: Arc<Platform>) -> Router {
    Router::new()
        .route("/api/v1/health", get(health))
        .route("/api/v1/keys", post(create_key))
        .route("/api/v1/datasets", post(upload_dataset).get(list_datasets))
        .route("/api/v1/datasets/:id", get(get_dataset))
        .route("/api/v1/datasets/:id/schema", get(dataset_schema))
        .route("/api/v1/agreements", post(grant).get(list_agreements))
        .route("/api/v1/agreements/:id/revoke", post(revoke))
        .route("/api/v1/workflows", post(create_workflow).get(list_workflows))
        .route("/api/v1/workflows/validate", post(validate_workflow))
        .route("/api/v1/workflows/:id", get(get_workflow))
        .route("/api/v1/applications", post(save_application).get(list_applications))
        .route("/api/v1/applications/:id/instantiate", post(instantiate))
        .route("/api/v1/jobs", post(submit_job).get(list_jobs))
        .route("/api/v1/jobs/:id", get(get_job))
        .route("/api/v1/jobs/:id/cancel", post(cancel_job))
        .route("/api/v1/jobs/:id/results", get(job_results))
        .route("/api/v1/jobs/:id/series", get(job_series))
        .route("/api/v1/sandboxes", get(list_sandboxes))
        .route("/api/v1/sandboxes/:id", get(get_sandbox))
        .route("/api/v1/sandboxes/:id/terminate", post(terminate_sandbox))
        .fallback(|| async { ApiError::not_found("no such endpoint") })
        .layer(DefaultBodyLimit::max(BODY_LIMIT))
        .with_state(platform)
}

async fn health() -> Json<Health> {
    Json(Health { status: "ok".into(), version: env!("CARGO_PKG_VERSION").into() })
}

async fn create_key(State(p): AppState, c: Caller, Body(req): Body<KeyRequest>) -> ApiResult<KeyIssued> {
    let key = p.registry.generate(c.id.clone()).map_err(|e| ApiError::internal(e.to_string()))?;
    let sealed_key = seal_key_material(&c.token, &req.request_nonce, &key).map_err(|e| ApiError::internal(e.to_string()))?;
    Ok(Json(KeyIssued { key_id: key.key_id, owner_id: c.id, sealed_key }))
}

async fn upload_dataset(State(p): AppState, c: Caller, Body(req): Body<DatasetUpload>) -> ApiResult<DatasetDescriptor> {
    let p2 = p.clone();
    tokio::task::spawn_blocking(move || p2.upload_dataset(&c.id, req, Utc::now()))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?
        .map(Json)
}

async fn list_datasets(State(p): AppState, _c: Caller, Query(q): Query<ListQuery>) -> ApiResult<Page<DatasetDescriptor>> {
    let owner = q.owner.map(PrincipalId::new);
    Ok(Json(paginate(p.storage.list_datasets(owner.as_ref()), q.cursor.as_deref())?))
}

fn dataset(p: &Platform, raw: &str) -> Result<DatasetDescriptor, ApiError> {
    let id: DatasetId = parse_id("dataset", raw)?;
    p.storage.get_dataset(&id).ok_or_else(|| ApiError::not_found(format!("dataset {id}")))
}

async fn get_dataset(State(p): AppState, _c: Caller, Path(id): Path<String>) -> ApiResult<DatasetDescriptor> {
    Ok(Json(dataset(&p, &id)?))
}

async fn dataset_schema(State(p): AppState, _c: Caller, Path(id): Path<String>) -> ApiResult<Schema> {
    Ok(Json(dataset(&p, &id)?.schema))
}

async fn grant(State(p): AppState, c: Caller, Body(req): Body<GrantRequest>) -> ApiResult<SharingAgreement> {
    let d = p
        .storage
        .get_dataset(&req.dataset_id)
        .ok_or_else(|| ApiError::not_found(format!("dataset {}", req.dataset_id)))?;
    if !p.config.principals.iter().any(|x| x.id == req.consumer_id) {
        return Err(ApiError::bad_request("unknown-principal", format!("{} is not a principal", req.consumer_id)));
    }
    let a = p
        .agreements
        .grant(&c.id, &req.consumer_id, req.dataset_id, &d.owner_id, Duration::seconds(req.ttl_secs), Utc::now())?;
    Ok(Json(a))
}

async fn list_agreements(State(p): AppState, c: Caller, Query(q): Query<ListQuery>) -> ApiResult<Page<SharingAgreement>> {
    let now = Utc::now();
    let _ = p.agreements.expire_due(now);
    Ok(Json(paginate(p.agreements.list_for(&c.id), q.cursor.as_deref())?))
}

async fn revoke(State(p): AppState, c: Caller, Path(id): Path<String>) -> ApiResult<SharingAgreement> {
    let id: AgreementId = parse_id("agreement", &id)?;
    let a = p.agreements.get(&id).ok_or_else(|| ApiError::not_found(format!("agreement {id}")))?;
    if a.provider_id != c.id {
        return Err(ApiError::forbidden("not-owner", "only the provider can revoke an agreement"));
    }
    Ok(Json(p.agreements.revoke(id, Utc::now())?))
}

fn definition(owner: PrincipalId, req: WorkflowRequest) -> WorkflowDefinition {
    WorkflowDefinition {
        workflow_id: WorkflowId::new(),
        owner_id: owner,
        name: req.name,
        inputs: req.inputs,
        pipeline: req.pipeline,
        algorithm: req.algorithm,
        visualization: req.visualization,
        created_at: Utc::now(),
    }
}

async fn validate_workflow(State(p): AppState, c: Caller, Body(req): Body<WorkflowRequest>) -> ApiResult<ValidationReport> {
    let wf = definition(c.id, req);
    let output_schema = p.validate(&wf, Utc::now())?;
    Ok(Json(ValidationReport { output_schema }))
}

async fn create_workflow(State(p): AppState, c: Caller, Body(req): Body<WorkflowRequest>) -> ApiResult<WorkflowDefinition> {
    Ok(Json(p.add_workflow(definition(c.id, req), Utc::now())?))
}

async fn list_workflows(State(p): AppState, c: Caller, Query(q): Query<ListQuery>) -> ApiResult<Page<WorkflowDefinition>> {
    Ok(Json(paginate(p.workflows(&c.id), q.cursor.as_deref())?))
}

async fn get_workflow(State(p): AppState, c: Caller, Path(id): Path<String>) -> ApiResult<WorkflowDefinition> {
    Ok(Json(p.workflow(&c.id, &parse_id("workflow", &id)?)?))
}

async fn save_application(State(p): AppState, c: Caller, Body(req): Body<ApplicationRequest>) -> ApiResult<ApplicationRecord> {
    let workflow = p.workflow(&c.id, &req.workflow_id)?;
    let rec = ApplicationRecord {
        application_id: ApplicationId::new(),
        owner_id: c.id,
        name: req.name,
        workflow,
        saved_at: Utc::now(),
    };
    Ok(Json(p.save_application(rec)?))
}

async fn list_applications(State(p): AppState, c: Caller, Query(q): Query<ListQuery>) -> ApiResult<Page<ApplicationRecord>> {
    Ok(Json(paginate(p.applications(&c.id), q.cursor.as_deref())?))
}

async fn instantiate(State(p): AppState, c: Caller, Path(id): Path<String>) -> ApiResult<WorkflowDefinition> {
    let id: ApplicationId = parse_id("application", &id)?;
    let app = p
        .applications(&c.id)
        .into_iter()
        .find(|a| a.application_id == id)
        .ok_or_else(|| ApiError::not_found(format!("application {id}")))?;
    let now = Utc::now();
    Ok(Json(p.add_workflow(app.workflow.fresh_copy(now), now)?))
}

async fn submit_job(State(p): AppState, c: Caller, Body(req): Body<JobRequest>) -> ApiResult<JobRecord> {
    Ok(Json(p.submit_job(&c.id, req.workflow_id, req.schedule, Utc::now())?))
}

async fn list_jobs(State(p): AppState, c: Caller, Query(q): Query<ListQuery>) -> ApiResult<Page<JobRecord>> {
    Ok(Json(paginate(p.jobs(&c.id), q.cursor.as_deref())?))
}

async fn get_job(State(p): AppState, c: Caller, Path(id): Path<String>) -> ApiResult<JobRecord> {
    Ok(Json(p.job(&c.id, &parse_id("job", &id)?)?))
}

async fn cancel_job(State(p): AppState, c: Caller, Path(id): Path<String>) -> ApiResult<JobRecord> {
    Ok(Json(p.cancel_job(&c.id, parse_id("job", &id)?, Utc::now())?))
}

async fn job_results(State(p): AppState, c: Caller, Path(id): Path<String>) -> ApiResult<seclab_core::analytics::ResultSet> {
    let id: JobId = parse_id("job", &id)?;
    let p2 = p.clone();
    let doc = tokio::task::spawn_blocking(move || p2.result_document(&c.id, id, Utc::now()))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))??;
    Ok(Json(doc.result_set))
}

async fn job_series(State(p): AppState, c: Caller, Path(id): Path<String>) -> ApiResult<DataSeries> {
    let id: JobId = parse_id("job", &id)?;
    let p2 = p.clone();
    let doc = tokio::task::spawn_blocking(move || p2.result_document(&c.id, id, Utc::now()))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))??;
    match doc.series {
        Some(s) => Ok(Json(s)),
        None => Err(ApiError::conflict(
            "no-series",
            doc.series_error.unwrap_or_else(|| "the job produced no series".into()),
        )),
    }
}

async fn list_sandboxes(State(p): AppState, c: Caller, Query(q): Query<ListQuery>) -> ApiResult<Page<SandboxDescriptor>> {
    Ok(Json(paginate(p.sandboxes(&c.id), q.cursor.as_deref())?))
}

async fn get_sandbox(State(p): AppState, c: Caller, Path(id): Path<String>) -> ApiResult<SandboxDescriptor> {
    let id: SandboxId = parse_id("sandbox", &id)?;
    p.sandboxes(&c.id)
        .into_iter()
        .find(|d| d.sandbox_id == id)
        .map(Json)
        .ok_or_else(|| ApiError::not_found(format!("sandbox {id}")))
}

async fn terminate_sandbox(State(p): AppState, c: Caller, Path(id): Path<String>) -> ApiResult<SandboxDescriptor> {
    let id: SandboxId = parse_id("sandbox", &id)?;
    let p2 = p.clone();
    tokio::task::spawn_blocking(move || p2.terminate_sandbox(&c.id, id, Utc::now()))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?
        .map(Json)
}

// ---- worker endpoints ----

pub fn worker_router(platform: Arc<Platform>) -> Router {
    Router::new()
        .route("/worker/v1/register", post(register))
        .route("/worker/v1/heartbeat", post(heartbeat))
        .route("/worker/v1/plan", get(poll_plan))
        .route("/worker/v1/progress", post(progress))
        .route("/worker/v1/objects", get(fetch_object))
        .route("/worker/v1/key-release", post(key_release))
        .route("/worker/v1/results/:job_id", put(upload_result))
        .fallback(|| async { ApiError::not_found("no such endpoint") })
        .layer(DefaultBodyLimit::max(BODY_LIMIT))
        .with_state(platform)
}

async fn register(State(p): AppState, headers: HeaderMap, Body(req): Body<RegisterRequest>) -> ApiResult<RegisterAck> {
    let token = bearer(&headers).ok_or_else(|| ApiError::unauthorized("bad-token", "missing sandbox token"))?;
    let d = p.orchestrator.register(req.sandbox_id, &token, Utc::now())?;
    tracing::info!(sandbox = %d.sandbox_id, owner = %d.owner_id, "worker registered");
    p.plan_ready.notify_waiters();
    Ok(Json(RegisterAck {
        sandbox_id: d.sandbox_id,
        owner_id: d.owner_id,
        heartbeat_interval_ms: p.config.heartbeat.interval_ms as u64,
    }))
}

async fn heartbeat(State(p): AppState, s: SandboxCaller, Body(hb): Body<Heartbeat>) -> ApiResult<HeartbeatAck> {
    if hb.sandbox_id != s.sandbox.sandbox_id {
        return Err(ApiError::unauthorized("bad-token", "token belongs to another sandbox"));
    }
    let state = p.orchestrator.heartbeat(s.sandbox.sandbox_id, Utc::now())?;
    Ok(Json(HeartbeatAck { terminate: matches!(state, SandboxState::Failed | SandboxState::Terminated) }))
}

async fn poll_plan(State(p): AppState, s: SandboxCaller) -> Json<PollResponse> {
    let sid = s.sandbox.sandbox_id;
    let deadline = tokio::time::Instant::now() + POLL_WAIT;
    loop {
        let notified = p.plan_ready.notified();
        tokio::pin!(notified);
        notified.as_mut().enable();
        if let Some(plan) = p.take_plan(sid) {
            return Json(PollResponse { plan: Some(plan), terminate: false });
        }
        let live = p
            .orchestrator
            .get(sid)
            .map_or(false, |d| !matches!(d.state, SandboxState::Failed | SandboxState::Terminated));
        if !live {
            return Json(PollResponse { plan: None, terminate: true });
        }
        if tokio::time::timeout_at(deadline, notified).await.is_err() {
            return Json(PollResponse { plan: None, terminate: false });
        }
    }
}

async fn progress(State(p): AppState, s: SandboxCaller, Body(r): Body<ProgressReport>) -> ApiResult<ProgressAck> {
    Ok(Json(p.report_progress(&s.sandbox, r, Utc::now())?))
}

#[derive(Deserialize)]
struct ObjectQuery {
    space_id: String,
    path: String,
    job_id: String,
}

async fn fetch_object(State(p): AppState, s: SandboxCaller, Query(q): Query<ObjectQuery>) -> Result<impl IntoResponse, ApiError> {
    let space_id: SpaceId = parse_id("space", &q.space_id)?;
    let job_id: JobId = parse_id("job", &q.job_id)?;
    let path = ObjectPath::parse(&q.path).map_err(|e| ApiError::bad_request("invalid-path", e.to_string()))?;
    let bytes = p.plan_object(s.sandbox.sandbox_id, job_id, &ObjectRef { space_id, path })?;
    Ok(([(CONTENT_TYPE, "application/octet-stream")], bytes))
}

async fn key_release(State(p): AppState, s: SandboxCaller, body: Bytes) -> Result<impl IntoResponse, ApiError> {
    let req: KeyReleaseRequest = decode_frame(&body).map_err(|e| ApiError::bad_request("invalid-frame", e.to_string()))?;
    let channel = p.channel_for(&s.sandbox, &req);
    let resp = p.release.release_key(&req, &channel, Utc::now());
    let sealed_key = match resp.key() {
        Some(k) => Some(seal_key_material(&s.token, &req.request_nonce, k).map_err(|e| ApiError::internal(e.to_string()))?),
        None => None,
    };
    let reply = KeyReleaseReply {
        request_nonce: req.request_nonce,
        denial: resp.denial().map(|d| d.code().to_owned()),
        owner_id: resp.key().map(|k| k.owner_id.clone()),
        sealed_key,
    };
    let frame = encode_frame(&reply).map_err(|e| ApiError::internal(e.to_string()))?;
    Ok(([(CONTENT_TYPE, "application/octet-stream")], frame))
}

async fn upload_result(State(p): AppState, s: SandboxCaller, Path(job_id): Path<String>, body: Bytes) -> ApiResult<UploadReceipt> {
    let job_id: JobId = parse_id("job", &job_id)?;
    let p2 = p.clone();
    let result_ref = tokio::task::spawn_blocking(move || p2.store_result(s.sandbox.sandbox_id, job_id, &body, Utc::now()))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))??;
    Ok(Json(UploadReceipt { result_ref }))
}
