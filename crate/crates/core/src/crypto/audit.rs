use std::io;
use std::path::Path;
use std::sync::Mutex;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::ids::{AgreementId, KeyId, PrincipalId};
use crate::jsonl::{self, RecordLog};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditOutcome {
    Granted,
    Denied,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub timestamp: DateTime<Utc>,
    pub requester_id: PrincipalId,
    pub key_id: KeyId,
    pub agreement_id: Option<AgreementId>,
    pub outcome: AuditOutcome,
    pub reason: String,
}

/// Append-only record of key-release decisions. Appends are serialized.
pub struct AuditLog {
    inner: Mutex<(Vec<AuditEntry>, Option<RecordLog>)>,
}

impl AuditLog {
    pub fn in_memory() -> Self {
        Self {
            inner: Mutex::new((Vec::new(), None)),
        }
    }

    pub fn open(path: &Path) -> io::Result<Self> {
        let entries = jsonl::read_records(path)?;
        Ok(Self {
            inner: Mutex::new((entries, Some(RecordLog::open(path)?))),
        })
    }

    pub fn append(&self, entry: AuditEntry) -> io::Result<()> {
        let mut guard = self.inner.lock().expect("audit lock");
        if let Some(log) = &mut guard.1 {
            log.append(&entry)?;
        }
        guard.0.push(entry);
        Ok(())
    }

    pub fn entries(&self) -> Vec<AuditEntry> {
        self.inner.lock().expect("audit lock").0.clone()
    }

    pub fn len(&self) -> usize {
        self.inner.lock().expect("audit lock").0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
