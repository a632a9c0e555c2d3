//! Sandbox lifecycle: provisioning, heartbeat tracking and secure teardown.

use std::collections::BTreeMap;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration as StdDuration;

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};

use crate::ids::{JobId, PrincipalId, SandboxId};
use crate::storage::ScopedRoot;
use crate::token::BearerToken;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SandboxState {
    Provisioning,
    Ready,
    Busy,
    /// Missed heartbeats or never completed its handshake; awaiting teardown.
    Failed,
    Terminated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResourceBudget {
    pub max_sandboxes: usize,
    pub memory_ceiling_mb: u64,
    pub job_timeout_secs: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeartbeatPolicy {
    pub interval: StdDuration,
    pub miss_threshold: u32,
    pub handshake_timeout: StdDuration,
}

impl HeartbeatPolicy {
    pub fn failure_age(&self) -> Duration {
        Duration::from_std(self.interval * self.miss_threshold).expect("small duration")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SandboxDescriptor {
    pub sandbox_id: SandboxId,
    pub owner_id: PrincipalId,
    pub state: SandboxState,
    /// How the coordinator reaches the worker. Workers pull, so this names the process.
    pub endpoint: Option<String>,
    pub scoped_root: PathBuf,
    #[serde(skip)]
    pub capability_token: Option<BearerToken>,
    pub started_at: DateTime<Utc>,
    pub last_heartbeat: Option<DateTime<Utc>>,
    pub current_job: Option<JobId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HealthReport {
    pub sandbox_id: SandboxId,
    pub state: SandboxState,
    pub heartbeat_age_ms: Option<i64>,
    pub current_job: Option<JobId>,
}

/// Everything a worker needs at launch.
#[derive(Debug, Clone)]
pub struct LaunchSpec {
    pub sandbox_id: SandboxId,
    pub coordinator: String,
    pub token: BearerToken,
    pub scoped_root: PathBuf,
    pub memory_ceiling_mb: u64,
}

pub trait WorkerHandle: Send {
    fn kill(&mut self);
    fn is_alive(&mut self) -> bool;
    fn describe(&self) -> String;
}

pub trait Launcher: Send + Sync {
    fn launch(&self, spec: &LaunchSpec) -> io::Result<Box<dyn WorkerHandle>>;
}

#[derive(Debug, thiserror::Error)]
pub enum OrchestratorError {
    #[error("sandbox budget of {0} exhausted")]
    BudgetExceeded(usize),
    #[error("owner {0} already has a live sandbox")]
    AlreadyProvisioned(PrincipalId),
    #[error("worker did not complete its handshake in time")]
    HandshakeTimeout,
    #[error("unknown sandbox {0}")]
    UnknownSandbox(SandboxId),
    #[error("sandbox {0} is already terminated")]
    AlreadyTerminated(SandboxId),
    #[error("bad token")]
    BadToken,
    #[error("launch failed: {0}")]
    Launch(io::Error),
    #[error("teardown: {0}")]
    Io(#[from] io::Error),
}

impl OrchestratorError {
    pub fn code(&self) -> &'static str {
        match self {
            Self::BudgetExceeded(_) => "budget-exceeded",
            Self::AlreadyProvisioned(_) => "already-provisioned",
            Self::HandshakeTimeout => "handshake-timeout",
            Self::UnknownSandbox(_) => "unknown-sandbox",
            Self::AlreadyTerminated(_) => "already-terminated",
            Self::BadToken => "bad-token",
            Self::Launch(_) => "provision-failure",
            Self::Io(_) => "internal",
        }
    }
}

struct Entry {
    desc: SandboxDescriptor,
    handle: Option<Box<dyn WorkerHandle>>,
}

#[derive(Default)]
struct State {
    sandboxes: BTreeMap<SandboxId, Entry>,
}

pub struct Orchestrator {
    root: PathBuf,
    coordinator: String,
    budget: ResourceBudget,
    heartbeat: HeartbeatPolicy,
    launcher: Arc<dyn Launcher>,
    state: Mutex<State>,
    changed: Condvar,
}

impl Orchestrator {
    /// `root` holds the scoped roots. Leftovers from an earlier process belong to
    /// sandboxes that no longer exist and are wiped here.
    pub fn new(
        root: impl Into<PathBuf>,
        coordinator: String,
        budget: ResourceBudget,
        heartbeat: HeartbeatPolicy,
        launcher: Arc<dyn Launcher>,
    ) -> io::Result<Self> {
        let root = root.into();
        std::fs::create_dir_all(&root)?;
        for entry in std::fs::read_dir(&root)? {
            let p = entry?.path();
            if p.is_dir() {
                tracing::info!(path = %p.display(), "wiping orphaned scoped root");
                ScopedRoot::attach(&p)?.destroy()?;
            }
        }
        Ok(Self {
            root,
            coordinator,
            budget,
            heartbeat,
            launcher,
            state: Mutex::new(State::default()),
            changed: Condvar::new(),
        })
    }

    pub fn budget(&self) -> ResourceBudget {
        self.budget
    }

    pub fn heartbeat_policy(&self) -> HeartbeatPolicy {
        self.heartbeat
    }

    pub fn sandboxes_root(&self) -> &Path {
        &self.root
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, State> {
        self.state.lock().expect("orchestrator lock")
    }

    /// Launches a worker and returns once it has registered.
    pub fn provision(&self, owner_id: &PrincipalId) -> Result<SandboxDescriptor, OrchestratorError> {
        let desc = self.begin_provision(owner_id, Utc::now())?;
        self.await_ready(desc.sandbox_id, self.heartbeat.handshake_timeout)
    }

    /// Reserves the slot and launches the worker; the sandbox stays provisioning until
    /// the worker registers.
    pub fn begin_provision(&self, owner_id: &PrincipalId, now: DateTime<Utc>) -> Result<SandboxDescriptor, OrchestratorError> {
        let spec;
        {
            let mut st = self.lock();
            let live: Vec<&Entry> = st
                .sandboxes
                .values()
                .filter(|e| e.desc.state != SandboxState::Terminated)
                .collect();
            if live.iter().any(|e| &e.desc.owner_id == owner_id) {
                return Err(OrchestratorError::AlreadyProvisioned(owner_id.clone()));
            }
            if live.len() >= self.budget.max_sandboxes {
                return Err(OrchestratorError::BudgetExceeded(self.budget.max_sandboxes));
            }
            let sandbox_id = SandboxId::new();
            let scoped = ScopedRoot::create(self.root.join(sandbox_id.to_string()))?;
            let token = BearerToken::generate();
            spec = LaunchSpec {
                sandbox_id,
                coordinator: self.coordinator.clone(),
                token: token.clone(),
                scoped_root: scoped.path().to_path_buf(),
                memory_ceiling_mb: self.budget.memory_ceiling_mb,
            };
            st.sandboxes.insert(
                sandbox_id,
                Entry {
                    desc: SandboxDescriptor {
                        sandbox_id,
                        owner_id: owner_id.clone(),
                        state: SandboxState::Provisioning,
                        endpoint: None,
                        scoped_root: spec.scoped_root.clone(),
                        capability_token: Some(token),
                        started_at: now,
                        last_heartbeat: None,
                        current_job: None,
                    },
                    handle: None,
                },
            );
        }
        // launched outside the lock: the worker registers through this same object
        match self.launcher.launch(&spec) {
            Ok(handle) => {
                let mut st = self.lock();
                let e = st.sandboxes.get_mut(&spec.sandbox_id).expect("reserved");
                e.desc.endpoint = Some(handle.describe());
                e.handle = Some(handle);
                Ok(e.desc.clone())
            }
            Err(err) => {
                let _ = self.terminate(spec.sandbox_id);
                Err(OrchestratorError::Launch(err))
            }
        }
    }

    /// Waits for the worker's handshake. On timeout the sandbox is torn down.
    pub fn await_ready(&self, sandbox_id: SandboxId, timeout: StdDuration) -> Result<SandboxDescriptor, OrchestratorError> {
        let st = self.lock();
        let (st, _) = self
            .changed
            .wait_timeout_while(st, timeout, |st| {
                st.sandboxes
                    .get(&sandbox_id)
                    .map_or(false, |e| e.desc.state == SandboxState::Provisioning)
            })
            .expect("orchestrator lock");
        let state = st.sandboxes.get(&sandbox_id).map(|e| e.desc.state);
        match state {
            None => Err(OrchestratorError::UnknownSandbox(sandbox_id)),
            Some(SandboxState::Ready | SandboxState::Busy) => Ok(st.sandboxes[&sandbox_id].desc.clone()),
            Some(_) => {
                drop(st);
                let _ = self.terminate(sandbox_id);
                Err(OrchestratorError::HandshakeTimeout)
            }
        }
    }

    /// Worker handshake. The token must match the sandbox it claims to be.
    pub fn register(&self, sandbox_id: SandboxId, token: &BearerToken, now: DateTime<Utc>) -> Result<SandboxDescriptor, OrchestratorError> {
        let mut st = self.lock();
        let e = st.sandboxes.get_mut(&sandbox_id).ok_or(OrchestratorError::BadToken)?;
        if e.desc.capability_token.as_ref() != Some(token) {
            return Err(OrchestratorError::BadToken);
        }
        if e.desc.state == SandboxState::Provisioning {
            // a job may already be assigned while the worker was starting
            e.desc.state = if e.desc.current_job.is_some() { SandboxState::Busy } else { SandboxState::Ready };
        }
        e.desc.last_heartbeat = Some(now);
        let d = e.desc.clone();
        drop(st);
        self.changed.notify_all();
        Ok(d)
    }

    /// The non-terminated sandbox holding `token`.
    pub fn authenticate(&self, token: &BearerToken) -> Option<SandboxDescriptor> {
        self.lock()
            .sandboxes
            .values()
            .find(|e| {
                e.desc.state != SandboxState::Terminated
                    && e.desc.capability_token.as_ref().map_or(false, |t| t == token)
            })
            .map(|e| e.desc.clone())
    }

    pub fn heartbeat(&self, sandbox_id: SandboxId, now: DateTime<Utc>) -> Result<SandboxState, OrchestratorError> {
        let mut st = self.lock();
        let e = st.sandboxes.get_mut(&sandbox_id).ok_or(OrchestratorError::UnknownSandbox(sandbox_id))?;
        if matches!(e.desc.state, SandboxState::Ready | SandboxState::Busy) {
            e.desc.last_heartbeat = Some(now);
        }
        Ok(e.desc.state)
    }

    pub fn set_job(&self, sandbox_id: SandboxId, job: Option<JobId>) -> Result<(), OrchestratorError> {
        let mut st = self.lock();
        let e = st.sandboxes.get_mut(&sandbox_id).ok_or(OrchestratorError::UnknownSandbox(sandbox_id))?;
        e.desc.current_job = job;
        if matches!(e.desc.state, SandboxState::Ready | SandboxState::Busy) {
            e.desc.state = if job.is_some() { SandboxState::Busy } else { SandboxState::Ready };
        }
        Ok(())
    }

    pub fn get(&self, sandbox_id: SandboxId) -> Result<SandboxDescriptor, OrchestratorError> {
        self.lock()
            .sandboxes
            .get(&sandbox_id)
            .map(|e| e.desc.clone())
            .ok_or(OrchestratorError::UnknownSandbox(sandbox_id))
    }

    pub fn live_for(&self, owner_id: &PrincipalId) -> Option<SandboxDescriptor> {
        self.lock()
            .sandboxes
            .values()
            .find(|e| &e.desc.owner_id == owner_id && e.desc.state != SandboxState::Terminated)
            .map(|e| e.desc.clone())
    }

    pub fn list(&self) -> Vec<SandboxDescriptor> {
        self.lock().sandboxes.values().map(|e| e.desc.clone()).collect()
    }

    pub fn monitor(&self, sandbox_id: SandboxId, now: DateTime<Utc>) -> Result<HealthReport, OrchestratorError> {
        let d = self.get(sandbox_id)?;
        Ok(HealthReport {
            sandbox_id,
            state: d.state,
            heartbeat_age_ms: d.last_heartbeat.map(|t| (now - t).num_milliseconds()),
            current_job: d.current_job,
        })
    }

    /// Marks sandboxes failed when their heartbeat is `miss_threshold` intervals old, when
    /// the worker process has exited, or when a provisioning sandbox outlives the
    /// handshake timeout. Returns them with the
    /// job they held.
    pub fn sweep(&self, now: DateTime<Utc>) -> Vec<(SandboxDescriptor, Option<JobId>)> {
        let limit = self.heartbeat.failure_age();
        let handshake = Duration::from_std(self.heartbeat.handshake_timeout).expect("small duration");
        let mut failed = Vec::new();
        let mut st = self.lock();
        for e in st.sandboxes.values_mut() {
            let exited = e.handle.as_mut().map_or(false, |h| !h.is_alive());
            let dead = match e.desc.state {
                SandboxState::Ready | SandboxState::Busy => {
                    exited || e.desc.last_heartbeat.map_or(true, |t| now - t >= limit)
                }
                SandboxState::Provisioning => exited || now - e.desc.started_at >= handshake + limit,
                _ => false,
            };
            if dead {
                e.desc.state = SandboxState::Failed;
                failed.push((e.desc.clone(), e.desc.current_job));
            }
        }
        drop(st);
        if !failed.is_empty() {
            self.changed.notify_all();
        }
        failed
    }

    /// Stops the worker, wipes its scoped root and invalidates its token.
    pub fn terminate(&self, sandbox_id: SandboxId) -> Result<SandboxDescriptor, OrchestratorError> {
        let (handle, root) = {
            let mut st = self.lock();
            let e = st.sandboxes.get_mut(&sandbox_id).ok_or(OrchestratorError::UnknownSandbox(sandbox_id))?;
            if e.desc.state == SandboxState::Terminated {
                return Err(OrchestratorError::AlreadyTerminated(sandbox_id));
            }
            e.desc.state = SandboxState::Terminated;
            e.desc.capability_token = None;
            e.desc.current_job = None;
            (e.handle.take(), e.desc.scoped_root.clone())
        };
        self.changed.notify_all();
        if let Some(mut h) = handle {
            h.kill();
        }
        if root.exists() {
            ScopedRoot::attach(&root)?.destroy()?;
        }
        self.get(sandbox_id)
    }

    /// Terminates every live sandbox (shutdown path).
    pub fn terminate_all(&self) {
        let ids: Vec<SandboxId> = self
            .lock()
            .sandboxes
            .values()
            .filter(|e| e.desc.state != SandboxState::Terminated)
            .map(|e| e.desc.sandbox_id)
            .collect();
        for id in ids {
            if let Err(e) = self.terminate(id) {
                tracing::warn!(sandbox = %id, "terminate failed: {e}");
            }
        }
    }
}
