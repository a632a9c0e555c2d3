use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};

use crate::ids::{JobId, PrincipalId, SandboxId, WorkflowId};
use crate::jsonl::{read_records, RecordLog};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Schedule {
    Immediate,
    At { at: DateTime<Utc> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    Scheduled,
    Queued,
    Fetching,
    Decrypting,
    Running,
    EncryptingResults,
    Uploading,
    Completed,
    Failed,
    Cancelled,
}

impl JobState {
    /// The worker-reported phases, in order.
    pub const CHAIN: [JobState; 6] = [
        JobState::Fetching,
        JobState::Decrypting,
        JobState::Running,
        JobState::EncryptingResults,
        JobState::Uploading,
        JobState::Completed,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Scheduled => "scheduled",
            Self::Queued => "queued",
            Self::Fetching => "fetching",
            Self::Decrypting => "decrypting",
            Self::Running => "running",
            Self::EncryptingResults => "encrypting_results",
            Self::Uploading => "uploading",
            Self::Completed => "completed",
            Self::Failed => "failed",
            Self::Cancelled => "cancelled",
        }
    }

    pub fn is_terminal(self) -> bool {
        matches!(self, Self::Completed | Self::Failed | Self::Cancelled)
    }

    /// Handed to a worker and not yet finished.
    pub fn is_in_flight(self) -> bool {
        matches!(
            self,
            Self::Fetching | Self::Decrypting | Self::Running | Self::EncryptingResults | Self::Uploading
        )
    }

    pub fn can_transition(self, to: JobState) -> bool {
        use JobState::*;
        if self.is_terminal() {
            return false;
        }
        matches!(
            (self, to),
            (Scheduled, Queued)
                | (Queued, Fetching)
                | (Fetching, Decrypting)
                | (Decrypting, Running)
                | (Running, EncryptingResults)
                | (EncryptingResults, Uploading)
                | (Uploading, Completed)
                | (_, Failed)
                | (Scheduled | Queued, Cancelled)
        )
    }
}

impl fmt::Display for JobState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for JobState {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        serde_json::from_value(serde_json::Value::String(s.to_owned())).map_err(|_| format!("unknown job state {s}"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobFailure {
    /// Phase-tagged code such as `key-denied` or `integrity-failure`.
    pub code: String,
    pub message: String,
}

impl JobFailure {
    pub fn new(code: &str, message: impl Into<String>) -> Self {
        Self { code: code.to_owned(), message: message.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transition {
    pub state: JobState,
    pub at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobRecord {
    pub job_id: JobId,
    pub workflow_id: WorkflowId,
    pub owner_id: PrincipalId,
    pub schedule: Schedule,
    pub state: JobState,
    pub sandbox_id: Option<SandboxId>,
    pub transitions: Vec<Transition>,
    pub error: Option<JobFailure>,
    pub result_ref: Option<String>,
    pub provision_attempts: u32,
    pub retry_at: Option<DateTime<Utc>>,
}

impl JobRecord {
    pub fn entered_at(&self, state: JobState) -> Option<DateTime<Utc>> {
        self.transitions.iter().find(|t| t.state == state).map(|t| t.at)
    }

    pub fn last_transition_at(&self) -> DateTime<Utc> {
        self.transitions.last().map(|t| t.at).expect("every job has an initial transition")
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SchedulerError {
    #[error("unknown job {0}")]
    UnknownJob(JobId),
    #[error("illegal transition {from} -> {to}")]
    IllegalTransition { from: JobState, to: JobState },
    #[error("job is not due until {0}")]
    NotDue(DateTime<Utc>),
    #[error("job in state {0} cannot be cancelled")]
    NotCancellable(JobState),
    #[error("event log: {0}")]
    Io(#[from] std::io::Error),
}

impl SchedulerError {
    pub fn code(&self) -> &'static str {
        match self {
            Self::UnknownJob(_) => "unknown-job",
            Self::IllegalTransition { .. } => "illegal-transition",
            Self::NotDue(_) => "illegal-transition",
            Self::NotCancellable(_) => "not-cancellable",
            Self::Io(_) => "internal",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", content = "detail", rename_all = "snake_case")]
pub enum EventKind {
    Submitted(JobRecord),
    State { state: JobState, error: Option<JobFailure> },
    Assigned { sandbox_id: SandboxId },
    Unassigned,
    ProvisionRetry { attempts: u32, retry_at: DateTime<Utc> },
    Result { result_ref: String },
}

/// One line of the job event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobEvent {
    pub ts: DateTime<Utc>,
    pub job_id: JobId,
    #[serde(flatten)]
    pub kind: EventKind,
}

/// Outcome of a state update. `changed` is false for a duplicate delivery.
#[derive(Debug, Clone)]
pub struct Updated {
    pub record: JobRecord,
    pub changed: bool,
}

/// All jobs, rebuilt from the event log at open. Mutations append before returning.
#[derive(Debug, Default)]
pub struct JobBook {
    jobs: BTreeMap<JobId, JobRecord>,
    order: Vec<JobId>,
    log: Option<RecordLog>,
}

impl JobBook {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn open(path: &Path) -> Result<Self, SchedulerError> {
        let events: Vec<JobEvent> = read_records(path)?;
        let mut book = Self::default();
        for e in events {
            book.apply(&e);
        }
        book.log = Some(RecordLog::open(path)?);
        Ok(book)
    }

    fn apply(&mut self, e: &JobEvent) {
        if let EventKind::Submitted(rec) = &e.kind {
            self.order.push(rec.job_id);
            self.jobs.insert(rec.job_id, rec.clone());
            return;
        }
        let Some(job) = self.jobs.get_mut(&e.job_id) else {
            tracing::warn!(job = %e.job_id, "event for unknown job ignored");
            return;
        };
        match &e.kind {
            EventKind::Submitted(_) => unreachable!(),
            EventKind::State { state, error } => {
                job.state = *state;
                job.transitions.push(Transition { state: *state, at: e.ts });
                if error.is_some() {
                    job.error = error.clone();
                }
            }
            EventKind::Assigned { sandbox_id } => {
                job.sandbox_id = Some(*sandbox_id);
                job.retry_at = None;
            }
            EventKind::Unassigned => job.sandbox_id = None,
            EventKind::ProvisionRetry { attempts, retry_at } => {
                job.provision_attempts = *attempts;
                job.retry_at = Some(*retry_at);
            }
            EventKind::Result { result_ref } => job.result_ref = Some(result_ref.clone()),
        }
    }

    fn record(&mut self, job_id: JobId, ts: DateTime<Utc>, kind: EventKind) -> Result<(), SchedulerError> {
        let event = JobEvent { ts, job_id, kind };
        if let Some(log) = &mut self.log {
            log.append(&event)?;
        }
        self.apply(&event);
        Ok(())
    }

    pub fn submit(
        &mut self,
        workflow_id: WorkflowId,
        owner_id: PrincipalId,
        schedule: Schedule,
        now: DateTime<Utc>,
    ) -> Result<JobRecord, SchedulerError> {
        let state = match schedule {
            Schedule::Immediate => JobState::Queued,
            Schedule::At { .. } => JobState::Scheduled,
        };
        let rec = JobRecord {
            job_id: JobId::new(),
            workflow_id,
            owner_id,
            schedule,
            state,
            sandbox_id: None,
            transitions: vec![Transition { state, at: now }],
            error: None,
            result_ref: None,
            provision_attempts: 0,
            retry_at: None,
        };
        let id = rec.job_id;
        self.record(id, now, EventKind::Submitted(rec))?;
        Ok(self.jobs[&id].clone())
    }

    pub fn get(&self, job_id: &JobId) -> Result<&JobRecord, SchedulerError> {
        self.jobs.get(job_id).ok_or(SchedulerError::UnknownJob(*job_id))
    }

    /// Jobs in submission order, optionally restricted to one owner.
    pub fn list(&self, owner: Option<&PrincipalId>) -> Vec<&JobRecord> {
        self.order
            .iter()
            .map(|id| &self.jobs[id])
            .filter(|j| owner.map_or(true, |o| &j.owner_id == o))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.jobs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.jobs.is_empty()
    }

    /// Moves every scheduled job whose time has come to queued.
    pub fn promote_due(&mut self, now: DateTime<Utc>) -> Result<Vec<JobId>, SchedulerError> {
        let due: Vec<JobId> = self
            .order
            .iter()
            .filter(|id| {
                let j = &self.jobs[*id];
                j.state == JobState::Scheduled && matches!(j.schedule, Schedule::At { at } if at <= now)
            })
            .copied()
            .collect();
        for id in &due {
            self.record(*id, now, EventKind::State { state: JobState::Queued, error: None })?;
        }
        Ok(due)
    }

    /// Earliest future instant at which a scheduled job falls due or a provision retry
    /// becomes eligible.
    pub fn next_wakeup(&self) -> Option<DateTime<Utc>> {
        self.jobs
            .values()
            .filter_map(|j| match (j.state, j.schedule) {
                (JobState::Scheduled, Schedule::At { at }) => Some(at),
                (JobState::Queued, _) if j.sandbox_id.is_none() => j.retry_at,
                _ => None,
            })
            .min()
    }

    /// Queued, unassigned jobs eligible for dispatch, oldest first.
    pub fn dispatchable(&self, now: DateTime<Utc>) -> Vec<JobRecord> {
        let mut out: Vec<JobRecord> = self
            .order
            .iter()
            .map(|id| &self.jobs[id])
            .filter(|j| j.state == JobState::Queued && j.sandbox_id.is_none() && j.retry_at.map_or(true, |t| t <= now))
            .cloned()
            .collect();
        out.sort_by_key(|j| j.entered_at(JobState::Queued));
        out
    }

    /// The unfinished job holding a sandbox, if any.
    pub fn occupant(&self, sandbox: &SandboxId) -> Option<&JobRecord> {
        self.jobs
            .values()
            .find(|j| !j.state.is_terminal() && j.sandbox_id.as_ref() == Some(sandbox))
    }

    pub fn assign(&mut self, job_id: JobId, sandbox_id: SandboxId, now: DateTime<Utc>) -> Result<JobRecord, SchedulerError> {
        self.get(&job_id)?;
        self.record(job_id, now, EventKind::Assigned { sandbox_id })?;
        Ok(self.jobs[&job_id].clone())
    }

    pub fn unassign(&mut self, job_id: JobId, now: DateTime<Utc>) -> Result<JobRecord, SchedulerError> {
        self.get(&job_id)?;
        self.record(job_id, now, EventKind::Unassigned)?;
        Ok(self.jobs[&job_id].clone())
    }

    /// Counts a failed provisioning attempt. After `max_attempts` the job fails;
    /// otherwise it becomes eligible again after `base * 2^(attempts-1)`.
    pub fn provision_failed(
        &mut self,
        job_id: JobId,
        message: &str,
        max_attempts: u32,
        base: Duration,
        now: DateTime<Utc>,
    ) -> Result<JobRecord, SchedulerError> {
        let attempts = self.get(&job_id)?.provision_attempts + 1;
        if attempts >= max_attempts {
            self.record(job_id, now, EventKind::ProvisionRetry { attempts, retry_at: now })?;
            return self
                .update_state(job_id, JobState::Failed, Some(JobFailure::new("provision-failure", message)), now)
                .map(|u| u.record);
        }
        let retry_at = now + base * 2i32.pow(attempts - 1);
        self.record(job_id, now, EventKind::ProvisionRetry { attempts, retry_at })?;
        Ok(self.jobs[&job_id].clone())
    }

    /// Applies a legal transition. Re-delivery of the current state is acknowledged
    /// without a second transition.
    pub fn update_state(
        &mut self,
        job_id: JobId,
        to: JobState,
        error: Option<JobFailure>,
        now: DateTime<Utc>,
    ) -> Result<Updated, SchedulerError> {
        let rec = self.get(&job_id)?;
        let from = rec.state;
        if from == to {
            return Ok(Updated { record: self.jobs[&job_id].clone(), changed: false });
        }
        if !from.can_transition(to) {
            return Err(SchedulerError::IllegalTransition { from, to });
        }
        if let (JobState::Scheduled, JobState::Queued, Schedule::At { at }) = (from, to, rec.schedule) {
            if at > now {
                return Err(SchedulerError::NotDue(at));
            }
        }
        self.record(job_id, now, EventKind::State { state: to, error })?;
        Ok(Updated { record: self.jobs[&job_id].clone(), changed: true })
    }

    pub fn cancel(&mut self, job_id: JobId, now: DateTime<Utc>) -> Result<JobRecord, SchedulerError> {
        let from = self.get(&job_id)?.state;
        if !matches!(from, JobState::Queued | JobState::Scheduled) {
            return Err(SchedulerError::NotCancellable(from));
        }
        self.update_state(job_id, JobState::Cancelled, None, now).map(|u| u.record)
    }

    pub fn set_result(&mut self, job_id: JobId, result_ref: String, now: DateTime<Utc>) -> Result<(), SchedulerError> {
        self.get(&job_id)?;
        self.record(job_id, now, EventKind::Result { result_ref })
    }

    pub fn unfinished(&self) -> Vec<JobRecord> {
        self.order
            .iter()
            .map(|id| &self.jobs[id])
            .filter(|j| !j.state.is_terminal())
            .cloned()
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(secs: i64) -> DateTime<Utc> {
        DateTime::from_timestamp(1_700_000_000 + secs, 0).unwrap()
    }

    #[test]
    fn immediate_and_scheduled_submission() {
        let mut b = JobBook::in_memory();
        let q = b.submit(WorkflowId::new(), "alice".into(), Schedule::Immediate, t(0)).unwrap();
        assert_eq!(q.state, JobState::Queued);
        assert_eq!(q.entered_at(JobState::Queued), Some(t(0)));
        let s = b.submit(WorkflowId::new(), "alice".into(), Schedule::At { at: t(10) }, t(0)).unwrap();
        assert_eq!(s.state, JobState::Scheduled);
        assert!(b.promote_due(t(9)).unwrap().is_empty());
        assert_eq!(b.next_wakeup(), Some(t(10)));
        assert_eq!(b.promote_due(t(10)).unwrap(), vec![s.job_id]);
    }

    #[test]
    fn transitions_follow_the_chain() {
        let mut b = JobBook::in_memory();
        let j = b.submit(WorkflowId::new(), "a".into(), Schedule::Immediate, t(0)).unwrap().job_id;
        for s in JobState::CHAIN {
            assert!(b.update_state(j, s, None, t(1)).unwrap().changed);
        }
        assert!(matches!(
            b.update_state(j, JobState::Running, None, t(2)),
            Err(SchedulerError::IllegalTransition { .. })
        ));
        assert!(!b.update_state(j, JobState::Completed, None, t(2)).unwrap().changed);
        assert!(matches!(b.update_state(j, JobState::Failed, None, t(2)), Err(_)));
    }

    #[test]
    fn duplicate_phase_is_acknowledged_once() {
        let mut b = JobBook::in_memory();
        let j = b.submit(WorkflowId::new(), "a".into(), Schedule::Immediate, t(0)).unwrap().job_id;
        b.update_state(j, JobState::Fetching, None, t(1)).unwrap();
        let again = b.update_state(j, JobState::Fetching, None, t(2)).unwrap();
        assert!(!again.changed);
        assert_eq!(again.record.transitions.len(), 2);
    }

    #[test]
    fn cancel_rules() {
        let mut b = JobBook::in_memory();
        let s = b.submit(WorkflowId::new(), "a".into(), Schedule::At { at: t(5) }, t(0)).unwrap().job_id;
        assert_eq!(b.cancel(s, t(1)).unwrap().state, JobState::Cancelled);
        assert!(b.promote_due(t(6)).unwrap().is_empty());
        let r = b.submit(WorkflowId::new(), "a".into(), Schedule::Immediate, t(0)).unwrap().job_id;
        b.update_state(r, JobState::Fetching, None, t(1)).unwrap();
        assert!(matches!(b.cancel(r, t(2)), Err(SchedulerError::NotCancellable(JobState::Fetching))));
        assert!(matches!(b.get(&JobId::new()), Err(SchedulerError::UnknownJob(_))));
    }

    #[test]
    fn provision_retries_back_off_then_fail() {
        let mut b = JobBook::in_memory();
        let j = b.submit(WorkflowId::new(), "a".into(), Schedule::Immediate, t(0)).unwrap().job_id;
        let base = Duration::seconds(1);
        let r = b.provision_failed(j, "boom", 3, base, t(0)).unwrap();
        assert_eq!(r.retry_at, Some(t(1)));
        assert!(b.dispatchable(t(0)).is_empty());
        let r = b.provision_failed(j, "boom", 3, base, t(1)).unwrap();
        assert_eq!(r.retry_at, Some(t(3)));
        let r = b.provision_failed(j, "boom", 3, base, t(3)).unwrap();
        assert_eq!(r.state, JobState::Failed);
        assert_eq!(r.error.unwrap().code, "provision-failure");
    }

    #[test]
    fn replay_rebuilds_state() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("jobs.jsonl");
        let (a, s) = {
            let mut b = JobBook::open(&path).unwrap();
            let a = b.submit(WorkflowId::new(), "a".into(), Schedule::Immediate, t(0)).unwrap().job_id;
            let sb = SandboxId::new();
            b.assign(a, sb, t(1)).unwrap();
            b.update_state(a, JobState::Fetching, None, t(2)).unwrap();
            let s = b.submit(WorkflowId::new(), "a".into(), Schedule::At { at: t(100) }, t(3)).unwrap().job_id;
            (b.get(&a).unwrap().clone(), s)
        };
        let b = JobBook::open(&path).unwrap();
        assert_eq!(b.get(&a.job_id).unwrap(), &a);
        assert_eq!(b.get(&s).unwrap().state, JobState::Scheduled);
        assert_eq!(b.list(None).len(), 2);
    }
}
