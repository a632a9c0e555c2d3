//! Blocking client for the platform API.
//!
//! Dataset bytes never leave the caller in plaintext: `upload_csv` asks the coordinator
//! for a key (sealed to the caller's API token), encrypts locally and uploads the
//! envelope.

pub mod demo;

use std::time::{Duration, Instant};

use base64::Engine;
use rand::RngCore;
use reqwest::blocking::{Client as Http, RequestBuilder, Response};
use reqwest::StatusCode;
use serde::de::DeserializeOwned;
use serde::Serialize;

use seclab_core::analytics::{DataSeries, ResultSet};
use seclab_core::api::{
    ApplicationRequest, DatasetUpload, ErrorBody, GrantRequest, Health, JobRequest, KeyIssued, KeyRequest, Page,
    ValidationReport, WorkflowRequest,
};
use seclab_core::crypto::{self, channel, SharingAgreement, SymmetricKey};
use seclab_core::dataprep::{csv, Schema};
use seclab_core::ids::{AgreementId, ApplicationId, DatasetId, JobId, PrincipalId, SandboxId, WorkflowId};
use seclab_core::orchestrator::SandboxDescriptor;
use seclab_core::scheduler::{ApplicationRecord, JobRecord, Schedule, WorkflowDefinition};
use seclab_core::storage::DatasetDescriptor;
use seclab_core::token::BearerToken;

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("{status} {}: {}", .body.code, .body.message)]
    Api { status: u16, body: ErrorBody },
    #[error("transport: {0}")]
    Transport(String),
    #[error("{0}")]
    Local(String),
}

impl ClientError {
    /// The API error code, if the coordinator answered with one.
    pub fn code(&self) -> Option<&str> {
        match self {
            Self::Api { body, .. } => Some(&body.code),
            _ => None,
        }
    }
}

impl From<reqwest::Error> for ClientError {
    fn from(e: reqwest::Error) -> Self {
        Self::Transport(e.to_string())
    }
}

pub struct Client {
    http: Http,
    base: String,
    principal: PrincipalId,
    token: BearerToken,
}

impl Client {
    /// `endpoint` is the API base URL, e.g. `http://127.0.0.1:8640`.
    pub fn new(endpoint: &str, principal: PrincipalId, token: BearerToken) -> Result<Self, ClientError> {
        let http = Http::builder().timeout(Duration::from_secs(60)).build()?;
        Ok(Self { http, base: endpoint.trim_end_matches('/').to_owned(), principal, token })
    }

    pub fn principal(&self) -> &PrincipalId {
        &self.principal
    }

    fn url(&self, path: &str) -> String {
        format!("{}/api/v1{path}", self.base)
    }

    fn send<T: DeserializeOwned>(&self, req: RequestBuilder) -> Result<T, ClientError> {
        let resp = req.bearer_auth(self.token.to_hex()).send()?;
        decode(resp)
    }

    fn get<T: DeserializeOwned>(&self, path: &str) -> Result<T, ClientError> {
        self.send(self.http.get(self.url(path)))
    }

    fn post<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T, ClientError> {
        self.send(self.http.post(self.url(path)).json(body))
    }

    /// Follows `next_cursor` until the listing is exhausted.
    fn get_all<T: DeserializeOwned>(&self, path: &str) -> Result<Vec<T>, ClientError> {
        let mut out = Vec::new();
        let mut cursor: Option<String> = None;
        loop {
            let sep = if path.contains('?') { '&' } else { '?' };
            let url = match &cursor {
                Some(c) => format!("{path}{sep}cursor={c}"),
                None => path.to_owned(),
            };
            let page: Page<T> = self.get(&url)?;
            out.extend(page.items);
            match page.next_cursor {
                Some(c) => cursor = Some(c),
                None => return Ok(out),
            }
        }
    }

    pub fn health(&self) -> Result<Health, ClientError> {
        decode(self.http.get(format!("{}/api/v1/health", self.base)).send()?)
    }

    /// A fresh key owned by the caller, opened locally.
    pub fn create_key(&self) -> Result<SymmetricKey, ClientError> {
        let mut nonce = [0u8; 16];
        rand::rngs::OsRng.fill_bytes(&mut nonce);
        let issued: KeyIssued = self.post("/keys", &KeyRequest { request_nonce: nonce })?;
        channel::open_key_material(&self.token, &nonce, issued.key_id, issued.owner_id, &issued.sealed_key)
            .map_err(|e| ClientError::Local(format!("cannot open issued key: {e}")))
    }

    /// Parses the CSV locally (inferring types unless `schema` is given), encrypts it
    /// under a new key and uploads the envelope.
    pub fn upload_csv(&self, name: &str, text: &str, schema: Option<&Schema>) -> Result<DatasetDescriptor, ClientError> {
        let table = csv::read_csv(text, schema).map_err(|e| ClientError::Local(format!("{name}: {e}")))?;
        let key = self.create_key()?;
        let env = crypto::encrypt(text.as_bytes(), &key).map_err(|e| ClientError::Local(e.to_string()))?;
        self.upload_envelope(name, table.schema().clone(), table.row_count() as u64, &env.to_bytes())
    }

    pub fn upload_envelope(&self, name: &str, schema: Schema, row_count: u64, envelope: &[u8]) -> Result<DatasetDescriptor, ClientError> {
        let body = DatasetUpload {
            name: name.to_owned(),
            schema,
            row_count,
            envelope: base64::engine::general_purpose::STANDARD.encode(envelope),
        };
        self.post("/datasets", &body)
    }

    pub fn datasets(&self, owner: Option<&PrincipalId>) -> Result<Vec<DatasetDescriptor>, ClientError> {
        match owner {
            Some(o) => self.get_all(&format!("/datasets?owner={o}")),
            None => self.get_all("/datasets"),
        }
    }

    pub fn schema(&self, dataset_id: DatasetId) -> Result<Schema, ClientError> {
        self.get(&format!("/datasets/{dataset_id}/schema"))
    }

    pub fn grant(&self, dataset_id: DatasetId, consumer_id: &PrincipalId, ttl: Duration) -> Result<SharingAgreement, ClientError> {
        let body = GrantRequest { dataset_id, consumer_id: consumer_id.clone(), ttl_secs: ttl.as_secs() as i64 };
        self.post("/agreements", &body)
    }

    pub fn agreements(&self) -> Result<Vec<SharingAgreement>, ClientError> {
        self.get_all("/agreements")
    }

    pub fn revoke(&self, agreement_id: AgreementId) -> Result<SharingAgreement, ClientError> {
        self.post(&format!("/agreements/{agreement_id}/revoke"), &serde_json::json!({}))
    }

    pub fn validate_workflow(&self, req: &WorkflowRequest) -> Result<ValidationReport, ClientError> {
        self.post("/workflows/validate", req)
    }

    pub fn create_workflow(&self, req: &WorkflowRequest) -> Result<WorkflowDefinition, ClientError> {
        self.post("/workflows", req)
    }

    pub fn workflow(&self, workflow_id: WorkflowId) -> Result<WorkflowDefinition, ClientError> {
        self.get(&format!("/workflows/{workflow_id}"))
    }

    pub fn workflows(&self) -> Result<Vec<WorkflowDefinition>, ClientError> {
        self.get_all("/workflows")
    }

    pub fn save_application(&self, name: &str, workflow_id: WorkflowId) -> Result<ApplicationRecord, ClientError> {
        self.post("/applications", &ApplicationRequest { name: name.to_owned(), workflow_id })
    }

    pub fn applications(&self) -> Result<Vec<ApplicationRecord>, ClientError> {
        self.get_all("/applications")
    }

    pub fn instantiate(&self, application_id: ApplicationId) -> Result<WorkflowDefinition, ClientError> {
        self.post(&format!("/applications/{application_id}/instantiate"), &serde_json::json!({}))
    }

    pub fn submit_job(&self, workflow_id: WorkflowId, schedule: Schedule) -> Result<JobRecord, ClientError> {
        self.post("/jobs", &JobRequest { workflow_id, schedule })
    }

    pub fn job(&self, job_id: JobId) -> Result<JobRecord, ClientError> {
        self.get(&format!("/jobs/{job_id}"))
    }

    pub fn jobs(&self) -> Result<Vec<JobRecord>, ClientError> {
        self.get_all("/jobs")
    }

    pub fn cancel_job(&self, job_id: JobId) -> Result<JobRecord, ClientError> {
        self.post(&format!("/jobs/{job_id}/cancel"), &serde_json::json!({}))
    }

    pub fn results(&self, job_id: JobId) -> Result<ResultSet, ClientError> {
        self.get(&format!("/jobs/{job_id}/results"))
    }

    pub fn series(&self, job_id: JobId) -> Result<DataSeries, ClientError> {
        self.get(&format!("/jobs/{job_id}/series"))
    }

    pub fn sandboxes(&self) -> Result<Vec<SandboxDescriptor>, ClientError> {
        self.get_all("/sandboxes")
    }

    pub fn sandbox(&self, sandbox_id: SandboxId) -> Result<SandboxDescriptor, ClientError> {
        self.get(&format!("/sandboxes/{sandbox_id}"))
    }

    pub fn terminate_sandbox(&self, sandbox_id: SandboxId) -> Result<SandboxDescriptor, ClientError> {
        self.post(&format!("/sandboxes/{sandbox_id}/terminate"), &serde_json::json!({}))
    }

    /// Polls until the job is terminal or `timeout` elapses; returns the last record seen.
    pub fn wait_for_job(&self, job_id: JobId, timeout: Duration) -> Result<JobRecord, ClientError> {
        let deadline = Instant::now() + timeout;
        loop {
            let rec = self.job(job_id)?;
            if rec.state.is_terminal() || Instant::now() >= deadline {
                return Ok(rec);
            }
            std::thread::sleep(Duration::from_millis(50));
        }
    }
}

fn decode<T: DeserializeOwned>(resp: Response) -> Result<T, ClientError> {
    let status = resp.status();
    let bytes = resp.bytes()?;
    if status.is_success() {
        return serde_json::from_slice(&bytes).map_err(|e| ClientError::Transport(format!("bad response body: {e}")));
    }
    let body = serde_json::from_slice(&bytes).unwrap_or_else(|_| ErrorBody {
        code: if status == StatusCode::NOT_FOUND { "not-found".into() } else { "http-error".into() },
        message: String::from_utf8_lossy(&bytes).into_owned(),
        correlation_id: String::new(),
        step: None,
    });
    Err(ClientError::Api { status: status.as_u16(), body })
}
