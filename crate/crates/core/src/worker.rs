//! Sandbox-side plan execution.

use std::collections::HashMap;

use zeroize::Zeroizing;

use crate::analytics::{render_result_series, render_series, run_algorithm, AlgorithmSpec, ChartSpec, ChartType, DataSeries, Executor, ResultSet};
use crate::crypto::{self, EncryptedEnvelope, KeyReleaseRequest, SymmetricKey};
use crate::dataprep::{csv, run_pipeline, PrepPipeline, Schema, Table};
use crate::ids::{DatasetId, JobId, KeyId};
use crate::protocol::{Instruction, ObjectRef, ResultDocument, WorkerPlan};
use crate::scheduler::{JobFailure, JobState};
use crate::storage::{ObjectPath, ScopedRoot};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LinkError {
    #[error("coordinator unreachable: {0}")]
    Unreachable(String),
    #[error("{code}: {message}")]
    Rejected { code: String, message: String },
}

/// The worker's view of the coordinator. Implementations retry transient failures.
pub trait CoordinatorLink {
    fn report_progress(&self, job_id: JobId, phase: JobState, error: Option<JobFailure>) -> Result<(), LinkError>;
    fn fetch_object(&self, job_id: JobId, source: &ObjectRef) -> Result<Vec<u8>, LinkError>;
    /// `Ok(Err(code))` is an authorization denial.
    fn release_key(&self, request: &KeyReleaseRequest) -> Result<Result<SymmetricKey, String>, LinkError>;
    fn upload_result(&self, job_id: JobId, destination: &ObjectRef, envelope: Vec<u8>) -> Result<String, LinkError>;
}

#[derive(Debug, Clone, PartialEq)]
pub enum PlanOutcome {
    Completed { result_ref: String },
    Failed(JobFailure),
    /// The coordinator refused a progress report (e.g. the job was already failed).
    Abandoned(String),
}

impl PlanOutcome {
    pub fn state(&self) -> Option<JobState> {
        match self {
            Self::Completed { .. } => Some(JobState::Completed),
            Self::Failed(_) => Some(JobState::Failed),
            Self::Abandoned(_) => None,
        }
    }
}

enum Abort {
    Fail(JobFailure),
    Link(LinkError),
}

impl From<LinkError> for Abort {
    fn from(e: LinkError) -> Self {
        Abort::Link(e)
    }
}

fn fail(code: &str, msg: impl Into<String>) -> Abort {
    Abort::Fail(JobFailure::new(code, msg))
}

/// Per-job state: keys, staged envelopes and decrypted tables. Dropping it zeroes the
/// key buffers; `wipe` also clears the scoped root.
struct Session<'a> {
    scoped: &'a ScopedRoot,
    keys: HashMap<DatasetId, SymmetricKey>,
    schemas: HashMap<DatasetId, Schema>,
    tables: HashMap<DatasetId, Table>,
    result_key: Option<SymmetricKey>,
    result: Option<Zeroizing<Vec<u8>>>,
    sealed: Option<Vec<u8>>,
}

impl Session<'_> {
    fn wipe(&mut self) -> std::io::Result<()> {
        self.keys.clear();
        self.result_key = None;
        self.tables.clear();
        self.result = None;
        self.scoped.wipe().map(|_| ())
    }
}

fn staged(dataset_id: &DatasetId) -> ObjectPath {
    ObjectPath::parse(&format!("inbox/{dataset_id}.env")).expect("valid path")
}

fn plain_cache(dataset_id: &DatasetId) -> ObjectPath {
    ObjectPath::parse(&format!("plain/{dataset_id}.csv")).expect("valid path")
}

/// Builds the series for the workflow's chart, with a fitted line for single-feature
/// regressions plotted against their feature.
pub fn job_series(table: &Table, result: &ResultSet, algorithm: &AlgorithmSpec, chart: &ChartSpec) -> Result<DataSeries, String> {
    let mut series = if chart.result_table.is_some() {
        render_result_series(result, chart)
    } else {
        render_series(table, chart)
    }
    .map_err(|e| format!("{}: {e}", e.code()))?;
    if let AlgorithmSpec::LinearRegression { target, features } = algorithm {
        let plotted = chart.result_table.is_none()
            && matches!(chart.chart_type, ChartType::Scatter | ChartType::Line)
            && features.len() == 1
            && chart.x == features[0]
            && chart.y.contains(target);
        let weight = result.tables.get("coefficients").and_then(|t| t.rows.first()).and_then(|r| r[1].as_f64());
        if let (true, Some(b0), Some(b1)) = (plotted, result.get("intercept"), weight) {
            series.overlay("fitted", |x| b0 + b1 * x);
        }
    }
    Ok(series)
}

pub struct PlanRunner<'a, L: CoordinatorLink> {
    link: &'a L,
    scoped: &'a ScopedRoot,
    exec: Executor,
}

impl<'a, L: CoordinatorLink> PlanRunner<'a, L> {
    pub fn new(link: &'a L, scoped: &'a ScopedRoot, exec: Executor) -> Self {
        Self { link, scoped, exec }
    }

    /// Runs every instruction, reporting each phase once. Keys and plaintext are wiped
    /// before the terminal report on every path.
    pub fn execute_plan(&self, plan: &WorkerPlan) -> PlanOutcome {
        let mut session = Session {
            scoped: self.scoped,
            keys: HashMap::new(),
            schemas: HashMap::new(),
            tables: HashMap::new(),
            result_key: None,
            result: None,
            sealed: None,
        };
        let run = if plan.is_well_ordered() {
            self.run(plan, &mut session)
        } else {
            Err(fail("job-error", "plan is not well ordered"))
        };
        let wiped = session.wipe();
        drop(session);
        let outcome = match (run, wiped) {
            (Ok(result_ref), Ok(())) => PlanOutcome::Completed { result_ref },
            (Ok(_), Err(e)) => PlanOutcome::Failed(JobFailure::new("job-error", format!("wipe failed: {e}"))),
            (Err(Abort::Fail(f)), _) => PlanOutcome::Failed(f),
            (Err(Abort::Link(LinkError::Rejected { code, message })), _) => {
                return PlanOutcome::Abandoned(format!("{code}: {message}"))
            }
            (Err(Abort::Link(e)), _) => PlanOutcome::Failed(JobFailure::new("job-error", e.to_string())),
        };
        let report = match &outcome {
            PlanOutcome::Completed { .. } => self.link.report_progress(plan.job_id, JobState::Completed, None),
            PlanOutcome::Failed(f) => self.link.report_progress(plan.job_id, JobState::Failed, Some(f.clone())),
            PlanOutcome::Abandoned(_) => Ok(()),
        };
        match report {
            Ok(()) => outcome,
            Err(e) => PlanOutcome::Abandoned(e.to_string()),
        }
    }

    fn run(&self, plan: &WorkerPlan, s: &mut Session<'_>) -> Result<String, Abort> {
        let mut phase: Option<JobState> = None;
        let mut result_ref = None;
        for ins in &plan.instructions {
            if let Some(p) = ins.phase() {
                if phase != Some(p) {
                    self.link.report_progress(plan.job_id, p, None)?;
                    phase = Some(p);
                }
            }
            match ins {
                Instruction::FetchDataset { dataset_id, source, schema } => {
                    let bytes = self
                        .link
                        .fetch_object(plan.job_id, source)
                        .map_err(|e| fail("fetch-error", e.to_string()))?;
                    if !crypto::envelope::has_magic(&bytes) {
                        return Err(fail("integrity-failure", format!("dataset {dataset_id} is not an envelope")));
                    }
                    self.scoped
                        .write(&staged(dataset_id), &bytes)
                        .map_err(|e| fail("fetch-error", e.to_string()))?;
                    s.schemas.insert(*dataset_id, schema.clone());
                }
                Instruction::ObtainKey { dataset_id, key_id, agreement_id } => {
                    let req = KeyReleaseRequest::new(*key_id, plan.owner_id.clone(), *agreement_id);
                    match self.link.release_key(&req) {
                        Ok(Ok(key)) => {
                            s.keys.insert(*dataset_id, key);
                        }
                        Ok(Err(code)) => return Err(fail("key-denied", code)),
                        Err(e) => return Err(fail("key-denied", e.to_string())),
                    }
                }
                Instruction::Decrypt { dataset_id } => {
                    let key = s.keys.get(dataset_id).ok_or_else(|| fail("key-denied", "no key for dataset"))?;
                    let bytes = self
                        .scoped
                        .read(&staged(dataset_id))
                        .map_err(|e| fail("fetch-error", e.to_string()))?;
                    let env = EncryptedEnvelope::from_bytes(&bytes).map_err(|e| fail("integrity-failure", e.to_string()))?;
                    let plain = Zeroizing::new(crypto::decrypt(&env, key).map_err(|e| fail("integrity-failure", e.to_string()))?);
                    self.scoped
                        .write(&plain_cache(dataset_id), &plain)
                        .map_err(|e| fail("job-error", e.to_string()))?;
                    let text = std::str::from_utf8(&plain).map_err(|_| fail("job-error", "dataset is not UTF-8"))?;
                    let table = csv::read_csv(text, s.schemas.get(dataset_id))
                        .map_err(|e| fail("job-error", format!("dataset {dataset_id}: {e}")))?;
                    s.tables.insert(*dataset_id, table);
                }
                Instruction::RunJob { pipeline, algorithm, visualization } => {
                    let doc = self.run_job(&s.tables, pipeline, algorithm, visualization)?;
                    s.tables.clear();
                    self.scoped.wipe().map_err(|e| fail("job-error", e.to_string()))?;
                    let json = serde_json::to_vec(&doc).map_err(|e| fail("job-error", e.to_string()))?;
                    s.result = Some(Zeroizing::new(json));
                }
                Instruction::EncryptResults { key_id } => {
                    let req = KeyReleaseRequest::new(*key_id, plan.owner_id.clone(), None);
                    let key = match self.link.release_key(&req) {
                        Ok(Ok(k)) => k,
                        Ok(Err(code)) => return Err(fail("key-denied", code)),
                        Err(e) => return Err(fail("key-denied", e.to_string())),
                    };
                    let plain = s.result.take().ok_or_else(|| fail("job-error", "no result to encrypt"))?;
                    let env = crypto::encrypt(&plain, &key).map_err(|e| fail("job-error", e.to_string()))?;
                    s.sealed = Some(env.to_bytes());
                    s.result_key = Some(key);
                }
                Instruction::UploadResults { destination } => {
                    let sealed = s.sealed.take().ok_or_else(|| fail("upload-error", "no sealed result"))?;
                    let r = self
                        .link
                        .upload_result(plan.job_id, destination, sealed)
                        .map_err(|e| fail("upload-error", e.to_string()))?;
                    result_ref = Some(r);
                }
                Instruction::Terminate => break,
            }
        }
        result_ref.ok_or_else(|| fail("upload-error", "plan did not upload results"))
    }

    fn run_job(
        &self,
        tables: &HashMap<DatasetId, Table>,
        pipeline: &PrepPipeline,
        algorithm: &AlgorithmSpec,
        chart: &ChartSpec,
    ) -> Result<ResultDocument, Abort> {
        let prepared = run_pipeline(tables, pipeline).map_err(|e| fail("job-error", e.to_string()))?;
        let result_set = run_algorithm(&self.exec, &prepared, algorithm)
            .map_err(|e| fail("job-error", format!("{}: {e}", e.code())))?;
        let (series, series_error) = match job_series(&prepared, &result_set, algorithm, chart) {
            Ok(s) => (Some(s), None),
            Err(e) => (None, Some(e)),
        };
        Ok(ResultDocument { result_set, series, series_error })
    }
}

/// The key that decrypts a stored result, looked up by the caller.
pub fn open_result(envelope: &[u8], key: &SymmetricKey) -> Result<ResultDocument, String> {
    let env = EncryptedEnvelope::from_bytes(envelope).map_err(|e| e.to_string())?;
    let plain = Zeroizing::new(crypto::decrypt(&env, key).map_err(|e| e.to_string())?);
    serde_json::from_slice(&plain).map_err(|e| e.to_string())
}

/// Peeks at which key sealed an envelope.
pub fn envelope_key(envelope: &[u8]) -> Option<KeyId> {
    EncryptedEnvelope::peek_key_id(envelope).ok()
}
