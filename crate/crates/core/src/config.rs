//! Platform configuration file.

use std::collections::HashSet;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::time::Duration;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::crypto::KEY_LEN;
use crate::ids::PrincipalId;
use crate::orchestrator::{HeartbeatPolicy, ResourceBudget};
use crate::token::BearerToken;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Listen {
    #[serde(default = "default_api")]
    pub api: String,
    #[serde(default = "default_worker")]
    pub worker: String,
}

fn default_api() -> String {
    "127.0.0.1:8640".into()
}

fn default_worker() -> String {
    "127.0.0.1:8641".into()
}

impl Default for Listen {
    fn default() -> Self {
        Self { api: default_api(), worker: default_worker() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Principal {
    pub id: PrincipalId,
    /// 64 hex characters.
    pub token: String,
    #[serde(default)]
    pub expires_at: Option<DateTime<Utc>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Budget {
    #[serde(default = "d_max_sandboxes")]
    pub max_sandboxes: i64,
    #[serde(default = "d_memory")]
    pub memory_ceiling_mb: i64,
    #[serde(default = "d_timeout")]
    pub job_timeout_secs: i64,
}

fn d_max_sandboxes() -> i64 {
    4
}
fn d_memory() -> i64 {
    1024
}
fn d_timeout() -> i64 {
    300
}

impl Default for Budget {
    fn default() -> Self {
        Self { max_sandboxes: d_max_sandboxes(), memory_ceiling_mb: d_memory(), job_timeout_secs: d_timeout() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchedulerSettings {
    #[serde(default = "d_period")]
    pub dispatch_period_ms: i64,
    #[serde(default = "d_attempts")]
    pub provision_attempts: i64,
    #[serde(default = "d_backoff")]
    pub provision_backoff_ms: i64,
    /// An idle sandbox is kept warm this long for its owner's next job.
    #[serde(default = "d_idle")]
    pub idle_teardown_ms: i64,
}

fn d_period() -> i64 {
    500
}
fn d_attempts() -> i64 {
    3
}
fn d_backoff() -> i64 {
    500
}
fn d_idle() -> i64 {
    2000
}

impl Default for SchedulerSettings {
    fn default() -> Self {
        Self { dispatch_period_ms: d_period(), provision_attempts: d_attempts(), provision_backoff_ms: d_backoff(), idle_teardown_ms: d_idle() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeartbeatSettings {
    #[serde(default = "d_interval")]
    pub interval_ms: i64,
    #[serde(default = "d_misses")]
    pub miss_threshold: i64,
    #[serde(default = "d_handshake")]
    pub handshake_timeout_ms: i64,
}

fn d_interval() -> i64 {
    1000
}
fn d_misses() -> i64 {
    3
}
fn d_handshake() -> i64 {
    10_000
}

impl Default for HeartbeatSettings {
    fn default() -> Self {
        Self { interval_ms: d_interval(), miss_threshold: d_misses(), handshake_timeout_ms: d_handshake() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LauncherKind {
    /// One OS process per sandbox.
    #[default]
    Process,
    /// Workers as threads of the coordinator; for tests only.
    Thread,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlatformConfig {
    pub data_root: PathBuf,
    /// Wraps persisted dataset keys. Must live outside `data_root`.
    pub master_key_file: PathBuf,
    #[serde(default)]
    pub listen: Listen,
    pub principals: Vec<Principal>,
    #[serde(default)]
    pub budget: Budget,
    #[serde(default)]
    pub scheduler: SchedulerSettings,
    #[serde(default)]
    pub heartbeat: HeartbeatSettings,
    #[serde(default = "d_seed")]
    pub demo_seed: u64,
    #[serde(default)]
    pub launcher: LauncherKind,
    /// Worker executable for the process launcher; defaults to `seclab-worker` next to
    /// the running binary.
    #[serde(default)]
    pub worker_binary: Option<PathBuf>,
}

fn d_seed() -> u64 {
    42
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldError {
    pub field: String,
    /// `missing-field` or `out-of-range` (or `invalid` for malformed values).
    pub code: &'static str,
    pub message: String,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: io::Error },
    #[error("{}", format_fields(.0))]
    Invalid(Vec<FieldError>),
}

fn format_fields(errors: &[FieldError]) -> String {
    errors
        .iter()
        .map(|e| format!("{}: {} ({})", e.field, e.message, e.code))
        .collect::<Vec<_>>()
        .join("; ")
}

impl ConfigError {
    pub fn fields(&self) -> &[FieldError] {
        match self {
            Self::Invalid(f) => f,
            Self::Read { .. } => &[],
        }
    }
}

fn field(field: &str, code: &'static str, message: impl Into<String>) -> FieldError {
    FieldError { field: field.into(), code, message: message.into() }
}

fn positive(errors: &mut Vec<FieldError>, name: &str, v: i64) {
    if v <= 0 {
        errors.push(field(name, "out-of-range", format!("must be positive, got {v}")));
    }
}

impl PlatformConfig {
    pub fn resource_budget(&self) -> ResourceBudget {
        ResourceBudget {
            max_sandboxes: self.budget.max_sandboxes as usize,
            memory_ceiling_mb: self.budget.memory_ceiling_mb as u64,
            job_timeout_secs: self.budget.job_timeout_secs as u64,
        }
    }

    pub fn heartbeat_policy(&self) -> HeartbeatPolicy {
        HeartbeatPolicy {
            interval: Duration::from_millis(self.heartbeat.interval_ms as u64),
            miss_threshold: self.heartbeat.miss_threshold as u32,
            handshake_timeout: Duration::from_millis(self.heartbeat.handshake_timeout_ms as u64),
        }
    }

    pub fn dispatch_period(&self) -> Duration {
        Duration::from_millis(self.scheduler.dispatch_period_ms as u64)
    }

    pub fn idle_teardown(&self) -> Duration {
        Duration::from_millis(self.scheduler.idle_teardown_ms as u64)
    }

    /// Parsed principal tokens. Only valid after `validate`.
    pub fn principal_tokens(&self) -> Vec<(PrincipalId, BearerToken, Option<DateTime<Utc>>)> {
        self.principals
            .iter()
            .map(|p| (p.id.clone(), p.token.parse().expect("validated token"), p.expires_at))
            .collect()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut errors = Vec::new();
        if self.data_root.as_os_str().is_empty() {
            errors.push(field("data_root", "missing-field", "must not be empty"));
        }
        if self.master_key_file.starts_with(&self.data_root) {
            errors.push(field("master_key_file", "out-of-range", "must be outside data_root"));
        }
        positive(&mut errors, "budget.max_sandboxes", self.budget.max_sandboxes);
        positive(&mut errors, "budget.memory_ceiling_mb", self.budget.memory_ceiling_mb);
        positive(&mut errors, "budget.job_timeout_secs", self.budget.job_timeout_secs);
        positive(&mut errors, "scheduler.dispatch_period_ms", self.scheduler.dispatch_period_ms);
        positive(&mut errors, "scheduler.provision_attempts", self.scheduler.provision_attempts);
        positive(&mut errors, "scheduler.provision_backoff_ms", self.scheduler.provision_backoff_ms);
        positive(&mut errors, "scheduler.idle_teardown_ms", self.scheduler.idle_teardown_ms);
        positive(&mut errors, "heartbeat.interval_ms", self.heartbeat.interval_ms);
        positive(&mut errors, "heartbeat.miss_threshold", self.heartbeat.miss_threshold);
        positive(&mut errors, "heartbeat.handshake_timeout_ms", self.heartbeat.handshake_timeout_ms);
        for (name, addr) in [("listen.api", &self.listen.api), ("listen.worker", &self.listen.worker)] {
            if addr.parse::<std::net::SocketAddr>().is_err() {
                errors.push(field(name, "invalid", format!("{addr:?} is not host:port")));
            }
        }
        if self.principals.is_empty() {
            errors.push(field("principals", "missing-field", "at least one principal is required"));
        }
        let mut ids = HashSet::new();
        for (i, p) in self.principals.iter().enumerate() {
            if p.id.as_str().is_empty() {
                errors.push(field(&format!("principals[{i}].id"), "missing-field", "empty id"));
            }
            if !ids.insert(&p.id) {
                errors.push(field(&format!("principals[{i}].id"), "invalid", format!("duplicate id {}", p.id)));
            }
            if p.token.parse::<BearerToken>().is_err() {
                errors.push(field(&format!("principals[{i}].token"), "invalid", "expected 64 hex characters"));
            }
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(errors))
        }
    }
}

/// Parses TOML text. Unknown keys are returned as warnings. Relative paths resolve
/// against `base`.
pub fn parse_config(text: &str, base: &Path) -> Result<(PlatformConfig, Vec<String>), ConfigError> {
    let mut warnings = Vec::new();
    let de = toml::Deserializer::new(text);
    let mut cfg: PlatformConfig = serde_ignored::deserialize(de, |path| {
        warnings.push(format!("unknown field `{path}` ignored"));
    })
    .map_err(|e| {
        let msg = e.message().to_owned();
        let code = if msg.starts_with("missing field") { "missing-field" } else { "invalid" };
        let name = msg
            .split('`')
            .nth(1)
            .map(str::to_owned)
            .unwrap_or_else(|| "config".to_owned());
        ConfigError::Invalid(vec![field(&name, code, msg)])
    })?;
    for p in [&mut cfg.data_root, &mut cfg.master_key_file] {
        if p.is_relative() && !p.as_os_str().is_empty() {
            *p = base.join(&*p);
        }
    }
    if let Some(w) = cfg.worker_binary.as_mut() {
        if w.is_relative() {
            *w = base.join(&*w);
        }
    }
    cfg.validate()?;
    Ok((cfg, warnings))
}

pub fn load_config(path: &Path) -> Result<(PlatformConfig, Vec<String>), ConfigError> {
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.to_owned(), source })?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    parse_config(&text, &base)
}

/// Reads the master key, creating it (mode 0600) on first use.
pub fn load_or_create_master_key(path: &Path) -> io::Result<[u8; KEY_LEN]> {
    match fs::read_to_string(path) {
        Ok(text) => {
            let bytes = hex::decode(text.trim()).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
            bytes
                .try_into()
                .map_err(|_| io::Error::new(io::ErrorKind::InvalidData, "master key must be 32 bytes"))
        }
        Err(e) if e.kind() == io::ErrorKind::NotFound => {
            use rand::RngCore;
            let mut key = [0u8; KEY_LEN];
            rand::rngs::OsRng.fill_bytes(&mut key);
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent)?;
            }
            let mut opts = fs::OpenOptions::new();
            opts.write(true).create_new(true);
            #[cfg(unix)]
            std::os::unix::fs::OpenOptionsExt::mode(&mut opts, 0o600);
            io::Write::write_all(&mut opts.open(path)?, hex::encode(key).as_bytes())?;
            Ok(key)
        }
        Err(e) => Err(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
data_root = "data"
master_key_file = "master.key"

[[principals]]
id = "alice"
token = "0000000000000000000000000000000000000000000000000000000000000001"
"#;

    #[test]
    fn defaults_apply() {
        let (c, w) = parse_config(MINIMAL, Path::new("/etc/seclab")).unwrap();
        assert!(w.is_empty());
        assert_eq!(c.data_root, Path::new("/etc/seclab/data"));
        assert_eq!(c.scheduler.dispatch_period_ms, 500);
        assert_eq!(c.heartbeat.interval_ms, 1000);
        assert_eq!(c.heartbeat.miss_threshold, 3);
    }

    #[test]
    fn zero_budget_is_out_of_range() {
        let text = format!("{MINIMAL}\n[budget]\nmax_sandboxes = 0\n");
        let err = parse_config(&text, Path::new("/x")).unwrap_err();
        assert_eq!(err.fields()[0].field, "budget.max_sandboxes");
        assert_eq!(err.fields()[0].code, "out-of-range");
    }

    #[test]
    fn unknown_field_warns() {
        let text = MINIMAL.replace("data_root", "colour = \"blue\"\ndata_root");
        let (_, w) = parse_config(&text, Path::new("/x")).unwrap();
        assert_eq!(w.len(), 1);
        assert!(w[0].contains("colour"));
    }

    #[test]
    fn missing_field_is_reported() {
        let err = parse_config("master_key_file = \"k\"\nprincipals = []\n", Path::new("/x")).unwrap_err();
        assert_eq!(err.fields()[0].code, "missing-field");
        assert_eq!(err.fields()[0].field, "data_root");
    }

    #[test]
    fn master_key_is_created_once() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("k");
        let a = load_or_create_master_key(&p).unwrap();
        assert_eq!(load_or_create_master_key(&p).unwrap(), a);
    }
}
