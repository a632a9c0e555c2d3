//! Coordinator state shared by the platform API, the worker endpoints and the dispatcher.
//!
//! Lock order: `jobs`, then `plans`, then `idle_since`. The orchestrator, storage and
//! ledgers take only their own internal locks.

use std::collections::HashMap;
use std::path::Path;
use std::sync::{Arc, Mutex, MutexGuard, RwLock};

use chrono::{DateTime, Duration, Utc};
use tokio::sync::Notify;

use seclab_core::api::DatasetUpload;
use seclab_core::config::{load_or_create_master_key, PlatformConfig};
use seclab_core::crypto::{
    envelope, AgreementError, AgreementLedger, AuditLog, ChannelContext, DatasetKeyBinding, KeyRegistry,
    KeyReleaseRequest, KeyReleaseService, RegistryError,
};
use seclab_core::ids::{DatasetId, JobId, KeyId, PrincipalId, SandboxId, SpaceId, WorkflowId};
use seclab_core::jsonl::{read_records, RecordLog};
use seclab_core::orchestrator::{Launcher, Orchestrator, OrchestratorError, SandboxDescriptor, SandboxState};
use seclab_core::protocol::{Instruction, ObjectRef, ProgressAck, ProgressReport, ResultDocument, WorkerPlan};
use seclab_core::scheduler::{
    validate_workflow, ApplicationRecord, InputInfo, JobBook, JobFailure, JobRecord, JobState, SchedulerError,
    WorkflowDefinition, WorkflowError,
};
use seclab_core::storage::{validate_schema, DatasetDescriptor, ObjectPath, PrivateSpace, SecureStorage, StorageError};
use seclab_core::token::BearerToken;
use seclab_core::worker::{envelope_key, open_result};

use crate::error::ApiError;

#[derive(Debug, thiserror::Error)]
pub enum StartError {
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("storage: {0}")]
    Storage(#[from] StorageError),
    #[error("key registry: {0}")]
    Registry(#[from] RegistryError),
    #[error("agreements: {0}")]
    Agreements(#[from] AgreementError),
    #[error("job log: {0}")]
    Scheduler(#[from] SchedulerError),
    #[error("dataset {0}: stored envelope has no readable key id")]
    Binding(DatasetId),
}

/// Dataset to sealing key, rebuilt from the stored envelopes at startup.
#[derive(Default)]
pub struct Bindings(RwLock<HashMap<DatasetId, KeyId>>);

impl Bindings {
    fn insert(&self, dataset_id: DatasetId, key_id: KeyId) {
        self.0.write().expect("bindings lock").insert(dataset_id, key_id);
    }
}

impl DatasetKeyBinding for Bindings {
    fn key_for_dataset(&self, dataset_id: &DatasetId) -> Option<KeyId> {
        self.0.read().expect("bindings lock").get(dataset_id).copied()
    }
}

struct Mailbox {
    plan: WorkerPlan,
    delivered: bool,
}

struct Catalog {
    workflows: Vec<WorkflowDefinition>,
    workflow_log: RecordLog,
    applications: Vec<ApplicationRecord>,
    application_log: RecordLog,
}

pub struct Platform {
    pub config: PlatformConfig,
    pub storage: SecureStorage,
    pub registry: Arc<KeyRegistry>,
    pub agreements: Arc<AgreementLedger>,
    pub audit: Arc<AuditLog>,
    pub release: KeyReleaseService,
    pub orchestrator: Orchestrator,
    bindings: Arc<Bindings>,
    jobs: Mutex<JobBook>,
    catalog: Mutex<Catalog>,
    /// Held in memory only; reissued at every start.
    space_tokens: HashMap<SpaceId, BearerToken>,
    principals: Vec<(PrincipalId, BearerToken, Option<DateTime<Utc>>)>,
    plans: Mutex<HashMap<SandboxId, Mailbox>>,
    idle_since: Mutex<HashMap<SandboxId, DateTime<Utc>>>,
    /// Woken when a plan is placed in a mailbox.
    pub plan_ready: Notify,
    /// Woken when the dispatcher may have work: a submission, a finished job, a freed slot.
    pub wake: Notify,
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().expect("platform lock")
}

impl Platform {
    /// Opens (or creates) everything under `data_root` and reconciles the job log with
    /// the fact that no sandbox survives a coordinator restart.
    pub fn open(config: PlatformConfig, launcher: Arc<dyn Launcher>, worker_url: String) -> Result<Self, StartError> {
        let root = config.data_root.clone();
        std::fs::create_dir_all(&root)?;
        let master = load_or_create_master_key(&config.master_key_file)?;
        let storage = SecureStorage::open(&root)?;
        let now = Utc::now();
        for p in &config.principals {
            if storage.space_of(&p.id).is_none() {
                storage.create_space(&p.id, now)?;
            }
        }
        let mut space_tokens = HashMap::new();
        for space in storage.spaces() {
            space_tokens.insert(space.space_id, storage.reissue_token(space.space_id)?);
        }

        let registry = Arc::new(KeyRegistry::open(&root.join("keys.jsonl"), master)?);
        let agreements = Arc::new(AgreementLedger::open(&root.join("agreements.jsonl"))?);
        let audit = Arc::new(AuditLog::open(&root.join("audit.jsonl"))?);
        let bindings = Arc::new(Bindings::default());
        for d in storage.list_datasets(None) {
            let space = storage.space_of(&d.owner_id).ok_or(StorageError::AccessDenied)?;
            let bytes = storage.get_object(space.space_id, d.envelope_ref.as_str(), &space_tokens[&space.space_id])?;
            let key_id = envelope_key(&bytes).ok_or(StartError::Binding(d.dataset_id))?;
            bindings.insert(d.dataset_id, key_id);
        }
        let release = KeyReleaseService::new(registry.clone(), agreements.clone(), audit.clone(), bindings.clone());

        let mut jobs = JobBook::open(&root.join("jobs.jsonl"))?;
        for job in jobs.unfinished() {
            if job.state.is_in_flight() {
                let f = JobFailure::new("sandbox-lost", "coordinator restarted while the job was running");
                jobs.update_state(job.job_id, JobState::Failed, Some(f), now)?;
            } else if job.sandbox_id.is_some() {
                jobs.unassign(job.job_id, now)?;
            }
        }

        let orchestrator = Orchestrator::new(
            root.join("sandboxes"),
            worker_url,
            config.resource_budget(),
            config.heartbeat_policy(),
            launcher,
        )?;

        let catalog = Catalog {
            workflows: read_records(&root.join("workflows.jsonl"))?,
            workflow_log: RecordLog::open(root.join("workflows.jsonl"))?,
            applications: read_records(&root.join("applications.jsonl"))?,
            application_log: RecordLog::open(root.join("applications.jsonl"))?,
        };

        Ok(Self {
            principals: config.principal_tokens(),
            config,
            storage,
            registry,
            agreements,
            audit,
            release,
            orchestrator,
            bindings,
            jobs: Mutex::new(jobs),
            catalog: Mutex::new(catalog),
            space_tokens,
            plans: Mutex::new(HashMap::new()),
            idle_since: Mutex::new(HashMap::new()),
            plan_ready: Notify::new(),
            wake: Notify::new(),
        })
    }

    pub fn data_root(&self) -> &Path {
        &self.config.data_root
    }

    /// Resolves an API bearer token to its principal.
    pub fn authenticate(&self, token: &BearerToken, now: DateTime<Utc>) -> Result<PrincipalId, ApiError> {
        let (id, _, expires) = self
            .principals
            .iter()
            .find(|(_, t, _)| t == token)
            .ok_or_else(|| ApiError::unauthorized("unauthenticated", "unknown API token"))?;
        if expires.map_or(false, |e| e <= now) {
            return Err(ApiError::unauthorized("token-expired", format!("token for {id} has expired")));
        }
        Ok(id.clone())
    }

    fn space(&self, owner: &PrincipalId) -> Result<(PrivateSpace, &BearerToken), ApiError> {
        let space = self
            .storage
            .space_of(owner)
            .ok_or_else(|| ApiError::internal(format!("{owner} has no private space")))?;
        let token = &self.space_tokens[&space.space_id];
        Ok((space, token))
    }

    fn space_token(&self, space_id: &SpaceId) -> Result<&BearerToken, ApiError> {
        self.space_tokens.get(space_id).ok_or_else(|| ApiError::not_found(format!("space {space_id}")))
    }

    pub fn key_for_dataset(&self, dataset_id: &DatasetId) -> Option<KeyId> {
        self.bindings.key_for_dataset(dataset_id)
    }

    // ---- datasets ----

    /// Stores an envelope the caller sealed under one of its own keys and catalogues it.
    pub fn upload_dataset(&self, owner: &PrincipalId, req: DatasetUpload, now: DateTime<Utc>) -> Result<DatasetDescriptor, ApiError> {
        use base64::Engine;
        let bytes = base64::engine::general_purpose::STANDARD
            .decode(req.envelope.as_bytes())
            .map_err(|e| ApiError::bad_request("invalid-encoding", format!("envelope is not base64: {e}")))?;
        let key_id = envelope::EncryptedEnvelope::from_bytes(&bytes)
            .map(|e| e.key_id)
            .map_err(|e| ApiError::bad_request("not-an-envelope", e.to_string()))?;
        if self.registry.owner_of(&key_id).as_ref() != Some(owner) {
            return Err(ApiError::forbidden("key-not-owned", format!("key {key_id} was not issued to {owner}")));
        }
        validate_schema(&req.schema)?;
        let (space, token) = self.space(owner)?;
        let dataset_id = DatasetId::new();
        let path = format!("datasets/{dataset_id}.env");
        self.storage.put_object(space.space_id, &path, &bytes, token)?;
        let descriptor = DatasetDescriptor {
            dataset_id,
            owner_id: owner.clone(),
            name: req.name,
            schema: req.schema,
            row_count: req.row_count,
            envelope_ref: ObjectPath::parse(&path).expect("valid path"),
            created_at: now,
        };
        self.storage.register_dataset(descriptor.clone(), token)?;
        self.bindings.insert(dataset_id, key_id);
        Ok(descriptor)
    }

    // ---- workflows and applications ----

    fn input_info(&self, owner: &PrincipalId, dataset_id: &DatasetId, now: DateTime<Utc>) -> Option<InputInfo> {
        self.storage.get_dataset(dataset_id).map(|d| InputInfo {
            accessible: &d.owner_id == owner || self.agreements.has_active(owner, dataset_id, now),
            schema: d.schema,
        })
    }

    pub fn validate(&self, workflow: &WorkflowDefinition, now: DateTime<Utc>) -> Result<seclab_core::dataprep::Schema, WorkflowError> {
        validate_workflow(workflow, |id| self.input_info(&workflow.owner_id, id, now))
    }

    pub fn add_workflow(&self, mut workflow: WorkflowDefinition, now: DateTime<Utc>) -> Result<WorkflowDefinition, ApiError> {
        let schema = self.validate(&workflow, now)?;
        workflow.pipeline.output_schema = Some(schema);
        let mut cat = lock(&self.catalog);
        cat.workflow_log.append(&workflow).map_err(|e| ApiError::internal(e.to_string()))?;
        cat.workflows.push(workflow.clone());
        Ok(workflow)
    }

    pub fn workflow(&self, owner: &PrincipalId, workflow_id: &WorkflowId) -> Result<WorkflowDefinition, ApiError> {
        lock(&self.catalog)
            .workflows
            .iter()
            .find(|w| &w.workflow_id == workflow_id && &w.owner_id == owner)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("workflow {workflow_id}")))
    }

    pub fn workflows(&self, owner: &PrincipalId) -> Vec<WorkflowDefinition> {
        lock(&self.catalog).workflows.iter().filter(|w| &w.owner_id == owner).cloned().collect()
    }

    fn workflow_any(&self, workflow_id: &WorkflowId) -> Option<WorkflowDefinition> {
        lock(&self.catalog).workflows.iter().find(|w| &w.workflow_id == workflow_id).cloned()
    }

    pub fn save_application(&self, record: ApplicationRecord) -> Result<ApplicationRecord, ApiError> {
        let mut cat = lock(&self.catalog);
        cat.application_log.append(&record).map_err(|e| ApiError::internal(e.to_string()))?;
        cat.applications.push(record.clone());
        Ok(record)
    }

    pub fn applications(&self, owner: &PrincipalId) -> Vec<ApplicationRecord> {
        lock(&self.catalog).applications.iter().filter(|a| &a.owner_id == owner).cloned().collect()
    }

    // ---- jobs ----

    pub fn submit_job(&self, owner: &PrincipalId, workflow_id: WorkflowId, schedule: seclab_core::scheduler::Schedule, now: DateTime<Utc>) -> Result<JobRecord, ApiError> {
        let wf = self.workflow(owner, &workflow_id)?;
        self.validate(&wf, now)?;
        let rec = lock(&self.jobs).submit(workflow_id, owner.clone(), schedule, now)?;
        self.wake.notify_one();
        Ok(rec)
    }

    pub fn job(&self, owner: &PrincipalId, job_id: &JobId) -> Result<JobRecord, ApiError> {
        let jobs = lock(&self.jobs);
        match jobs.get(job_id) {
            Ok(j) if &j.owner_id == owner => Ok(j.clone()),
            _ => Err(ApiError::not_found(format!("job {job_id}"))),
        }
    }

    pub fn jobs(&self, owner: &PrincipalId) -> Vec<JobRecord> {
        lock(&self.jobs).list(Some(owner)).into_iter().cloned().collect()
    }

    /// Every job regardless of owner; used by operators and the acceptance harness.
    pub fn all_jobs(&self) -> Vec<JobRecord> {
        lock(&self.jobs).list(None).into_iter().cloned().collect()
    }

    pub fn cancel_job(&self, owner: &PrincipalId, job_id: JobId, now: DateTime<Utc>) -> Result<JobRecord, ApiError> {
        self.job(owner, &job_id)?;
        let mut jobs = lock(&self.jobs);
        let rec = jobs.cancel(job_id, now)?;
        if let Some(sid) = rec.sandbox_id {
            let mut plans = lock(&self.plans);
            if plans.get(&sid).map_or(false, |m| m.plan.job_id == job_id) {
                plans.remove(&sid);
                let _ = self.orchestrator.set_job(sid, None);
                lock(&self.idle_since).insert(sid, now);
            }
        }
        Ok(rec)
    }

    /// Decrypts a completed job's result for its owner. The key release is audited like
    /// any other.
    pub fn result_document(&self, owner: &PrincipalId, job_id: JobId, now: DateTime<Utc>) -> Result<ResultDocument, ApiError> {
        let rec = self.job(owner, &job_id)?;
        if rec.state != JobState::Completed {
            return Err(ApiError::conflict("not-completed", format!("job {job_id} is {}", rec.state)));
        }
        let path = rec
            .result_ref
            .ok_or_else(|| ApiError::internal(format!("job {job_id} completed without a result")))?;
        let (space, token) = self.space(owner)?;
        let bytes = self.storage.get_object(space.space_id, &path, token)?;
        let key_id = envelope_key(&bytes).ok_or_else(|| ApiError::internal("stored result is not an envelope"))?;
        let req = KeyReleaseRequest::new(key_id, owner.clone(), None);
        let resp = self.release.release_key(&req, &ChannelContext::authenticated(owner.clone()), now);
        let key = resp
            .key()
            .ok_or_else(|| ApiError::forbidden("key-denied", resp.denial().map_or("denied", |d| d.code())))?;
        open_result(&bytes, key)
            .map_err(|e| ApiError::new(axum::http::StatusCode::UNPROCESSABLE_ENTITY, "integrity-failure", e))
    }

    // ---- sandboxes ----

    pub fn sandboxes(&self, owner: &PrincipalId) -> Vec<SandboxDescriptor> {
        self.orchestrator.list().into_iter().filter(|d| &d.owner_id == owner).collect()
    }

    pub fn terminate_sandbox(&self, owner: &PrincipalId, sandbox_id: SandboxId, now: DateTime<Utc>) -> Result<SandboxDescriptor, ApiError> {
        let d = self.orchestrator.get(sandbox_id)?;
        if &d.owner_id != owner {
            return Err(ApiError::not_found(format!("sandbox {sandbox_id}")));
        }
        if d.state == SandboxState::Terminated {
            return Err(OrchestratorError::AlreadyTerminated(sandbox_id).into());
        }
        let mut jobs = lock(&self.jobs);
        self.release_occupant(&mut jobs, sandbox_id, "sandbox terminated by its owner", false, now);
        drop(jobs);
        self.retire(sandbox_id);
        Ok(self.orchestrator.get(sandbox_id)?)
    }

    /// Fails the sandbox's in-flight job or returns its queued job to the queue.
    fn release_occupant(&self, jobs: &mut JobBook, sandbox_id: SandboxId, why: &str, count_attempt: bool, now: DateTime<Utc>) {
        let Some(job) = jobs.occupant(&sandbox_id).cloned() else { return };
        let r = if job.state.is_in_flight() {
            jobs.update_state(job.job_id, JobState::Failed, Some(JobFailure::new("sandbox-lost", why)), now).map(|_| ())
        } else {
            jobs.unassign(job.job_id, now).and_then(|_| {
                if count_attempt {
                    let s = &self.config.scheduler;
                    jobs.provision_failed(
                        job.job_id,
                        why,
                        s.provision_attempts as u32,
                        Duration::milliseconds(s.provision_backoff_ms),
                        now,
                    )
                    .map(|_| ())
                } else {
                    Ok(())
                }
            })
        };
        if let Err(e) = r {
            tracing::error!(job = %job.job_id, "cannot release job from sandbox {sandbox_id}: {e}");
        }
    }

    /// Tears a sandbox down and forgets its mailbox.
    fn retire(&self, sandbox_id: SandboxId) {
        lock(&self.plans).remove(&sandbox_id);
        lock(&self.idle_since).remove(&sandbox_id);
        match self.orchestrator.terminate(sandbox_id) {
            Ok(_) | Err(OrchestratorError::AlreadyTerminated(_)) => {}
            Err(e) => tracing::error!(sandbox = %sandbox_id, "teardown failed: {e}"),
        }
        self.plan_ready.notify_waiters();
        self.wake.notify_one();
    }

    // ---- dispatch ----

    fn build_plan(&self, job: &JobRecord) -> Result<WorkerPlan, JobFailure> {
        let err = |m: String| JobFailure::new("job-error", m);
        let wf = self
            .workflow_any(&job.workflow_id)
            .ok_or_else(|| err(format!("workflow {} not found", job.workflow_id)))?;
        let mut fetch = Vec::new();
        let mut keys = Vec::new();
        let mut decrypt = Vec::new();
        for id in &wf.inputs {
            let d = self.storage.get_dataset(id).ok_or_else(|| err(format!("dataset {id} not found")))?;
            let space = self
                .storage
                .space_of(&d.owner_id)
                .ok_or_else(|| err(format!("dataset owner {} has no space", d.owner_id)))?;
            let key_id = self.key_for_dataset(id).ok_or_else(|| err(format!("dataset {id} has no key")))?;
            let agreement_id = if d.owner_id == job.owner_id {
                None
            } else {
                self.agreements.latest_for(&job.owner_id, id).map(|a| a.agreement_id)
            };
            fetch.push(Instruction::FetchDataset {
                dataset_id: *id,
                source: ObjectRef { space_id: space.space_id, path: d.envelope_ref.clone() },
                schema: d.schema.clone(),
            });
            keys.push(Instruction::ObtainKey { dataset_id: *id, key_id, agreement_id });
            decrypt.push(Instruction::Decrypt { dataset_id: *id });
        }
        let result_key = self
            .registry
            .generate(job.owner_id.clone())
            .map_err(|e| err(format!("result key: {e}")))?;
        let owner_space = self
            .storage
            .space_of(&job.owner_id)
            .ok_or_else(|| err(format!("{} has no space", job.owner_id)))?;
        let destination = ObjectRef {
            space_id: owner_space.space_id,
            path: ObjectPath::parse(&format!("results/{}.env", job.job_id)).expect("valid path"),
        };
        let mut instructions = fetch;
        instructions.extend(keys);
        instructions.extend(decrypt);
        instructions.push(Instruction::RunJob {
            pipeline: wf.pipeline.clone(),
            algorithm: wf.algorithm.clone(),
            visualization: wf.visualization.clone(),
        });
        instructions.push(Instruction::EncryptResults { key_id: result_key.key_id });
        instructions.push(Instruction::UploadResults { destination });
        instructions.push(Instruction::Terminate);
        Ok(WorkerPlan { job_id: job.job_id, owner_id: job.owner_id.clone(), instructions })
    }

    /// The earliest future moment the dispatcher has something to do.
    pub fn next_wakeup(&self) -> Option<DateTime<Utc>> {
        lock(&self.jobs).next_wakeup()
    }

    /// Promotes due jobs and hands queued jobs to sandboxes, provisioning where needed.
    pub fn dispatch_once(&self, now: DateTime<Utc>) {
        let mut jobs = lock(&self.jobs);
        if let Err(e) = jobs.promote_due(now) {
            tracing::error!("promoting scheduled jobs: {e}");
            return;
        }
        if let Err(e) = self.agreements.expire_due(now) {
            tracing::warn!("expiring agreements: {e}");
        }
        for job in jobs.dispatchable(now) {
            if let Err(e) = self.dispatch_job(&mut jobs, &job, now) {
                tracing::error!(job = %job.job_id, "dispatch failed: {e}");
            }
        }
    }

    fn dispatch_job(&self, jobs: &mut JobBook, job: &JobRecord, now: DateTime<Utc>) -> Result<(), SchedulerError> {
        let sandbox = match self.orchestrator.live_for(&job.owner_id) {
            Some(d) if d.state == SandboxState::Failed => return Ok(()),
            Some(d) => d,
            None => match self.provision(jobs, &job.owner_id, now) {
                Ok(d) => d,
                Err(OrchestratorError::BudgetExceeded(_)) => return Ok(()),
                Err(e) => {
                    tracing::warn!(job = %job.job_id, "provisioning failed: {e}");
                    let s = &self.config.scheduler;
                    jobs.provision_failed(
                        job.job_id,
                        &e.to_string(),
                        s.provision_attempts as u32,
                        Duration::milliseconds(s.provision_backoff_ms),
                        now,
                    )?;
                    return Ok(());
                }
            },
        };
        let sid = sandbox.sandbox_id;
        if jobs.occupant(&sid).is_some() {
            return Ok(());
        }
        let plan = match self.build_plan(job) {
            Ok(p) => p,
            Err(f) => {
                jobs.update_state(job.job_id, JobState::Failed, Some(f), now)?;
                return Ok(());
            }
        };
        jobs.assign(job.job_id, sid, now)?;
        let _ = self.orchestrator.set_job(sid, Some(job.job_id));
        lock(&self.idle_since).remove(&sid);
        lock(&self.plans).insert(sid, Mailbox { plan, delivered: false });
        self.plan_ready.notify_waiters();
        Ok(())
    }

    /// Provisions for `owner`, evicting the longest-idle sandbox of another owner when
    /// the budget is full.
    fn provision(&self, jobs: &JobBook, owner: &PrincipalId, now: DateTime<Utc>) -> Result<SandboxDescriptor, OrchestratorError> {
        match self.orchestrator.begin_provision(owner, now) {
            Err(OrchestratorError::BudgetExceeded(n)) => {
                let idle = lock(&self.idle_since).clone();
                let victim = self
                    .orchestrator
                    .list()
                    .into_iter()
                    .filter(|d| d.state == SandboxState::Ready && &d.owner_id != owner)
                    .filter(|d| jobs.occupant(&d.sandbox_id).is_none())
                    .min_by_key(|d| idle.get(&d.sandbox_id).copied().unwrap_or(now));
                match victim {
                    Some(v) => {
                        tracing::info!(sandbox = %v.sandbox_id, "evicting idle sandbox for {owner}");
                        self.retire(v.sandbox_id);
                        self.orchestrator.begin_provision(owner, now)
                    }
                    None => Err(OrchestratorError::BudgetExceeded(n)),
                }
            }
            other => other,
        }
    }

    /// Fails sandboxes that stopped heartbeating or exited, times out long jobs and
    /// retires sandboxes idle past the grace period.
    pub fn sweep_once(&self, now: DateTime<Utc>) {
        let mut jobs = lock(&self.jobs);
        for (desc, _) in self.orchestrator.sweep(now) {
            let never_registered = desc.last_heartbeat.is_none();
            tracing::warn!(sandbox = %desc.sandbox_id, never_registered, "sandbox failed");
            let why = if never_registered {
                "worker did not complete its handshake"
            } else {
                "sandbox stopped responding"
            };
            self.release_occupant(&mut jobs, desc.sandbox_id, why, never_registered, now);
            self.retire(desc.sandbox_id);
        }

        let limit = Duration::seconds(self.config.budget.job_timeout_secs);
        for job in jobs.unfinished() {
            if !job.state.is_in_flight() {
                continue;
            }
            let started = job.entered_at(JobState::Fetching).unwrap_or_else(|| job.last_transition_at());
            if now - started < limit {
                continue;
            }
            let f = JobFailure::new("timeout", format!("job exceeded {} s", limit.num_seconds()));
            if let Err(e) = jobs.update_state(job.job_id, JobState::Failed, Some(f), now) {
                tracing::error!(job = %job.job_id, "cannot time out job: {e}");
            }
            if let Some(sid) = job.sandbox_id {
                self.retire(sid);
            }
        }

        let grace = Duration::from_std(self.config.idle_teardown()).expect("small duration");
        for d in self.orchestrator.list() {
            if d.state != SandboxState::Ready || jobs.occupant(&d.sandbox_id).is_some() {
                continue;
            }
            let since = *lock(&self.idle_since).entry(d.sandbox_id).or_insert(now);
            if now - since >= grace {
                tracing::debug!(sandbox = %d.sandbox_id, "retiring idle sandbox");
                self.retire(d.sandbox_id);
            }
        }
    }

    // ---- worker side ----

    /// Hands out the sandbox's pending plan once.
    pub fn take_plan(&self, sandbox_id: SandboxId) -> Option<WorkerPlan> {
        let mut plans = lock(&self.plans);
        let m = plans.get_mut(&sandbox_id).filter(|m| !m.delivered)?;
        m.delivered = true;
        Some(m.plan.clone())
    }

    /// The plan the sandbox is executing (delivered or not).
    pub fn active_plan(&self, sandbox_id: SandboxId) -> Option<WorkerPlan> {
        lock(&self.plans).get(&sandbox_id).map(|m| m.plan.clone())
    }

    pub fn report_progress(&self, sandbox: &SandboxDescriptor, report: ProgressReport, now: DateTime<Utc>) -> Result<ProgressAck, ApiError> {
        let sid = sandbox.sandbox_id;
        let mut jobs = lock(&self.jobs);
        let rec = jobs.get(&report.job_id).map_err(ApiError::from)?;
        if rec.sandbox_id != Some(sid) {
            return Err(ApiError::conflict("not-assigned", format!("job {} is not assigned to this sandbox", report.job_id)));
        }
        if report.phase == JobState::Completed && rec.result_ref.is_none() {
            return Err(ApiError::conflict("rejected-illegal-phase", "completed reported before results were uploaded"));
        }
        if matches!(report.phase, JobState::Cancelled | JobState::Scheduled | JobState::Queued) {
            return Err(ApiError::conflict("rejected-illegal-phase", format!("workers cannot report {}", report.phase)));
        }
        let up = jobs
            .update_state(report.job_id, report.phase, report.error, now)
            .map_err(|e| match e {
                SchedulerError::IllegalTransition { .. } | SchedulerError::NotDue(_) => {
                    ApiError::conflict("rejected-illegal-phase", e.to_string())
                }
                other => other.into(),
            })?;
        if up.changed && up.record.state.is_terminal() {
            let _ = self.orchestrator.set_job(sid, None);
            lock(&self.plans).remove(&sid);
            lock(&self.idle_since).insert(sid, now);
            self.wake.notify_one();
        }
        Ok(ProgressAck { state: up.record.state, changed: up.changed })
    }

    /// Reads an object named by the sandbox's active plan for `job_id`.
    pub fn plan_object(&self, sandbox_id: SandboxId, job_id: JobId, source: &ObjectRef) -> Result<Vec<u8>, ApiError> {
        let plan = self
            .active_plan(sandbox_id)
            .filter(|p| p.job_id == job_id)
            .ok_or_else(|| ApiError::forbidden("access-denied", "no active plan for this job"))?;
        let allowed = plan
            .instructions
            .iter()
            .any(|i| matches!(i, Instruction::FetchDataset { source: s, .. } if s == source));
        if !allowed {
            return Err(ApiError::forbidden("access-denied", "object is not part of the plan"));
        }
        let token = self.space_token(&source.space_id)?;
        Ok(self.storage.get_object(source.space_id, source.path.as_str(), token)?)
    }

    /// A key-release request counts as authenticated only when it comes from a sandbox
    /// working for the requester on a plan that names the key.
    pub fn channel_for(&self, sandbox: &SandboxDescriptor, req: &KeyReleaseRequest) -> ChannelContext {
        let Some(plan) = self.active_plan(sandbox.sandbox_id) else {
            return ChannelContext::unauthenticated();
        };
        let named = plan.instructions.iter().any(|i| match i {
            Instruction::ObtainKey { key_id, .. } | Instruction::EncryptResults { key_id } => *key_id == req.key_id,
            _ => false,
        });
        if named && req.requester_id == sandbox.owner_id && plan.owner_id == sandbox.owner_id {
            ChannelContext::authenticated(sandbox.owner_id.clone())
        } else {
            ChannelContext::unauthenticated()
        }
    }

    /// Stores an uploaded result at the plan's destination.
    pub fn store_result(&self, sandbox_id: SandboxId, job_id: JobId, bytes: &[u8], now: DateTime<Utc>) -> Result<String, ApiError> {
        let plan = self
            .active_plan(sandbox_id)
            .filter(|p| p.job_id == job_id)
            .ok_or_else(|| ApiError::forbidden("access-denied", "no active plan for this job"))?;
        let dest = plan
            .instructions
            .iter()
            .find_map(|i| match i {
                Instruction::UploadResults { destination } => Some(destination.clone()),
                _ => None,
            })
            .ok_or_else(|| ApiError::forbidden("access-denied", "plan has no upload destination"))?;
        let token = self.space_token(&dest.space_id)?;
        self.storage.put_object(dest.space_id, dest.path.as_str(), bytes, token)?;
        let result_ref = dest.path.to_string();
        lock(&self.jobs).set_result(job_id, result_ref.clone(), now)?;
        Ok(result_ref)
    }
}
