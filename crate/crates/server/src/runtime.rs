//! The sandbox worker: registers, heartbeats, pulls plans and runs them.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use reqwest::blocking::{Client, RequestBuilder, Response};

use seclab_core::analytics::Executor;
use seclab_core::api::ErrorBody;
use seclab_core::crypto::channel::{decode_frame, encode_frame, open_key_material};
use seclab_core::crypto::{KeyReleaseRequest, SymmetricKey};
use seclab_core::ids::{JobId, SandboxId};
use seclab_core::protocol::{
    Heartbeat, HeartbeatAck, KeyReleaseReply, ObjectRef, PollResponse, ProgressAck, ProgressReport, RegisterAck,
    RegisterRequest, UploadReceipt,
};
use seclab_core::scheduler::{JobFailure, JobState};
use seclab_core::storage::ScopedRoot;
use seclab_core::token::BearerToken;
use seclab_core::worker::{CoordinatorLink, LinkError, PlanOutcome, PlanRunner};

use crate::launcher::{ENV_COORDINATOR, ENV_FAULT, ENV_SANDBOX_ID, ENV_SANDBOX_TOKEN, ENV_SCOPED_ROOT};

/// Injected misbehaviour, triggered when the worker reaches `phase`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Dies abruptly right after reporting the phase.
    Crash(JobState),
    /// Stops making progress after reporting the phase, while still heartbeating.
    Hang(JobState),
}

impl fmt::Display for Fault {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Crash(p) => write!(f, "crash:{p}"),
            Self::Hang(p) => write!(f, "hang:{p}"),
        }
    }
}

impl FromStr for Fault {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (kind, phase) = s.split_once(':').ok_or_else(|| format!("fault {s:?} is not kind:phase"))?;
        let phase: JobState = phase.parse()?;
        match kind {
            "crash" => Ok(Self::Crash(phase)),
            "hang" => Ok(Self::Hang(phase)),
            _ => Err(format!("unknown fault kind {kind:?}")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct WorkerArgs {
    pub coordinator: String,
    pub sandbox_id: SandboxId,
    pub token: BearerToken,
    pub scoped_root: PathBuf,
    pub fault: Option<Fault>,
    /// A crash fault in a thread worker stops the thread instead of aborting the process.
    pub in_process: bool,
}

impl WorkerArgs {
    pub fn from_env() -> Result<Self, String> {
        let var = |name: &str| std::env::var(name).map_err(|_| format!("{name} is not set"));
        Ok(Self {
            coordinator: var(ENV_COORDINATOR)?,
            sandbox_id: var(ENV_SANDBOX_ID)?.parse().map_err(|_| format!("{ENV_SANDBOX_ID} is not an id"))?,
            token: var(ENV_SANDBOX_TOKEN)?.parse().map_err(|_| format!("{ENV_SANDBOX_TOKEN} is malformed"))?,
            scoped_root: var(ENV_SCOPED_ROOT)?.into(),
            fault: std::env::var(ENV_FAULT).ok().map(|f| f.parse()).transpose()?,
            in_process: false,
        })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum WorkerError {
    #[error("coordinator refused the sandbox token")]
    BadToken,
    #[error("registration failed: {0}")]
    Register(String),
    #[error("scoped root: {0}")]
    Io(#[from] std::io::Error),
}

const RETRIES: u32 = 3;

struct Http {
    client: Client,
    base: String,
    token: BearerToken,
}

impl Http {
    fn url(&self, path: &str) -> String {
        format!("{}/worker/v1{path}", self.base)
    }

    /// Sends with retries on transport errors. Non-success statuses become `Rejected`.
    fn send(&self, build: impl Fn(&Client) -> RequestBuilder) -> Result<Response, LinkError> {
        let mut last = String::new();
        for attempt in 0..RETRIES {
            if attempt > 0 {
                std::thread::sleep(Duration::from_millis(100 << attempt));
            }
            match build(&self.client).bearer_auth(self.token.to_hex()).send() {
                Ok(r) if r.status().is_success() => return Ok(r),
                Ok(r) => {
                    let status = r.status();
                    let body: Option<ErrorBody> = r.json().ok();
                    return Err(match body {
                        Some(b) => LinkError::Rejected { code: b.code, message: b.message },
                        None => LinkError::Rejected { code: status.as_u16().to_string(), message: status.to_string() },
                    });
                }
                Err(e) => last = e.to_string(),
            }
        }
        Err(LinkError::Unreachable(last))
    }

    fn json<T: serde::de::DeserializeOwned>(&self, build: impl Fn(&Client) -> RequestBuilder) -> Result<T, LinkError> {
        self.send(build)?.json().map_err(|e| LinkError::Unreachable(format!("bad response: {e}")))
    }
}

struct HttpLink<'a> {
    http: &'a Http,
    fault: Option<Fault>,
    in_process: bool,
    stop: &'a AtomicBool,
    dead: &'a AtomicBool,
}

impl HttpLink<'_> {
    fn alive(&self) -> Result<(), LinkError> {
        if self.dead.load(Ordering::SeqCst) {
            return Err(LinkError::Unreachable("worker crashed".into()));
        }
        Ok(())
    }

    fn trip(&self, phase: JobState) -> Result<(), LinkError> {
        match self.fault {
            Some(Fault::Crash(p)) if p == phase => {
                tracing::warn!("injected crash at {phase}");
                if !self.in_process {
                    std::process::abort();
                }
                self.dead.store(true, Ordering::SeqCst);
                self.stop.store(true, Ordering::SeqCst);
                Err(LinkError::Unreachable("worker crashed".into()))
            }
            Some(Fault::Hang(p)) if p == phase => {
                tracing::warn!("injected hang at {phase}");
                while !self.stop.load(Ordering::SeqCst) {
                    std::thread::sleep(Duration::from_millis(20));
                }
                Err(LinkError::Unreachable("worker stopped".into()))
            }
            _ => Ok(()),
        }
    }

    fn poll(&self) -> Result<PollResponse, LinkError> {
        self.alive()?;
        self.http.json(|c| c.get(self.http.url("/plan")))
    }
}

impl CoordinatorLink for HttpLink<'_> {
    fn report_progress(&self, job_id: JobId, phase: JobState, error: Option<JobFailure>) -> Result<(), LinkError> {
        self.alive()?;
        let report = ProgressReport { job_id, phase, error };
        let _: ProgressAck = self.http.json(|c| c.post(self.http.url("/progress")).json(&report))?;
        self.trip(phase)
    }

    fn fetch_object(&self, job_id: JobId, source: &ObjectRef) -> Result<Vec<u8>, LinkError> {
        self.alive()?;
        let q = [
            ("space_id", source.space_id.to_string()),
            ("path", source.path.to_string()),
            ("job_id", job_id.to_string()),
        ];
        let r = self.http.send(|c| c.get(self.http.url("/objects")).query(&q))?;
        r.bytes().map(|b| b.to_vec()).map_err(|e| LinkError::Unreachable(e.to_string()))
    }

    fn release_key(&self, request: &KeyReleaseRequest) -> Result<Result<SymmetricKey, String>, LinkError> {
        self.alive()?;
        let frame = encode_frame(request).map_err(|e| LinkError::Unreachable(e.to_string()))?;
        let r = self.http.send(|c| c.post(self.http.url("/key-release")).body(frame.clone()))?;
        let bytes = r.bytes().map_err(|e| LinkError::Unreachable(e.to_string()))?;
        let reply: KeyReleaseReply =
            decode_frame(&bytes).map_err(|e| LinkError::Unreachable(format!("bad key-release frame: {e}")))?;
        if reply.request_nonce != request.request_nonce {
            return Ok(Err("channel-integrity: reply answers another request".into()));
        }
        if let Some(code) = reply.denial {
            return Ok(Err(code));
        }
        let Some(sealed) = reply.sealed_key else {
            return Ok(Err("channel-integrity: reply carries no key".into()));
        };
        let owner = reply.owner_id.unwrap_or_else(|| request.requester_id.clone());
        Ok(open_key_material(&self.http.token, &request.request_nonce, request.key_id, owner, &sealed)
            .map_err(|e| format!("channel-integrity: {e}")))
    }

    fn upload_result(&self, job_id: JobId, destination: &ObjectRef, envelope: Vec<u8>) -> Result<String, LinkError> {
        self.alive()?;
        tracing::debug!(%job_id, dest = %destination.path, "uploading result");
        let receipt: UploadReceipt = self
            .http
            .json(|c| c.put(self.http.url(&format!("/results/{job_id}"))).body(envelope.clone()))?;
        Ok(receipt.result_ref)
    }
}

fn register(http: &Http, sandbox_id: SandboxId) -> Result<RegisterAck, WorkerError> {
    let req = RegisterRequest { sandbox_id };
    let mut last = String::new();
    for attempt in 0..RETRIES {
        if attempt > 0 {
            std::thread::sleep(Duration::from_millis(200 << attempt));
        }
        match http.json::<RegisterAck>(|c| c.post(http.url("/register")).json(&req)) {
            Ok(ack) => return Ok(ack),
            Err(LinkError::Rejected { code, .. }) if code == "bad-token" => return Err(WorkerError::BadToken),
            Err(e) => last = e.to_string(),
        }
    }
    Err(WorkerError::Register(last))
}

/// Sleeps up to `d`, returning early once `stop` is set.
fn nap(d: Duration, stop: &AtomicBool) {
    let step = Duration::from_millis(20);
    let mut left = d;
    while !left.is_zero() && !stop.load(Ordering::SeqCst) {
        let s = left.min(step);
        std::thread::sleep(s);
        left -= s;
    }
}

/// Runs until the coordinator tells the worker to stop, revokes its token, becomes
/// unreachable, or `stop` is set. The scoped root is wiped on the way out.
pub fn run_worker(args: WorkerArgs, stop: Arc<AtomicBool>) -> Result<(), WorkerError> {
    let http = Arc::new(Http {
        client: Client::builder()
            .timeout(Duration::from_secs(30))
            .build()
            .map_err(|e| WorkerError::Register(e.to_string()))?,
        base: args.coordinator.trim_end_matches('/').to_owned(),
        token: args.token.clone(),
    });
    let scoped = ScopedRoot::attach(&args.scoped_root)?;
    let ack = register(&http, args.sandbox_id)?;
    tracing::info!(sandbox = %args.sandbox_id, owner = %ack.owner_id, "registered");

    let dead = Arc::new(AtomicBool::new(false));
    let current: Arc<Mutex<Option<JobId>>> = Arc::default();
    let heartbeat = {
        let (http, stop, dead, current) = (http.clone(), stop.clone(), dead.clone(), current.clone());
        let interval = Duration::from_millis(ack.heartbeat_interval_ms.max(1));
        let sandbox_id = args.sandbox_id;
        std::thread::spawn(move || loop {
            nap(interval, &stop);
            if stop.load(Ordering::SeqCst) || dead.load(Ordering::SeqCst) {
                return;
            }
            let hb = Heartbeat { sandbox_id, job_id: *current.lock().expect("current job") };
            match http.json::<HeartbeatAck>(|c| c.post(http.url("/heartbeat")).json(&hb)) {
                Ok(a) if a.terminate => stop.store(true, Ordering::SeqCst),
                Ok(_) => {}
                Err(LinkError::Rejected { .. }) => stop.store(true, Ordering::SeqCst),
                Err(e) => tracing::warn!("heartbeat: {e}"),
            }
        })
    };

    let link = HttpLink { http: &http, fault: args.fault, in_process: args.in_process, stop: &stop, dead: &dead };
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
    let runner = PlanRunner::new(&link, &scoped, Executor::new(threads));
    let mut failures = 0;
    while !stop.load(Ordering::SeqCst) {
        match link.poll() {
            Ok(PollResponse { terminate: true, .. }) => break,
            Ok(PollResponse { plan: Some(plan), .. }) => {
                failures = 0;
                *current.lock().expect("current job") = Some(plan.job_id);
                let outcome = runner.execute_plan(&plan);
                *current.lock().expect("current job") = None;
                match &outcome {
                    PlanOutcome::Completed { .. } => tracing::info!(job = %plan.job_id, "completed"),
                    PlanOutcome::Failed(f) => tracing::info!(job = %plan.job_id, code = %f.code, "failed: {}", f.message),
                    PlanOutcome::Abandoned(why) => tracing::info!(job = %plan.job_id, "abandoned: {why}"),
                }
            }
            Ok(_) => failures = 0,
            Err(LinkError::Rejected { code, message }) => {
                tracing::info!("coordinator refused poll ({code}: {message}); exiting");
                break;
            }
            Err(LinkError::Unreachable(e)) => {
                failures += 1;
                if failures >= 5 {
                    tracing::warn!("coordinator unreachable ({e}); exiting");
                    break;
                }
                nap(Duration::from_millis(200), &stop);
            }
        }
    }
    stop.store(true, Ordering::SeqCst);
    let _ = heartbeat.join();
    scoped.wipe()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fault_round_trip() {
        for s in ["crash:running", "hang:decrypting", "crash:encrypting_results"] {
            assert_eq!(s.parse::<Fault>().unwrap().to_string(), s);
        }
        assert!("boom:running".parse::<Fault>().is_err());
        assert!("crash".parse::<Fault>().is_err());
        assert!("crash:nowhere".parse::<Fault>().is_err());
    }
}
