use std::collections::BTreeMap;
use std::io;
use std::path::Path;
use std::sync::Mutex;

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};

use crate::ids::{AgreementId, DatasetId, PrincipalId};
use crate::jsonl::{self, RecordLog};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgreementStatus {
    Active,
    Revoked,
    Expired,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SharingAgreement {
    pub agreement_id: AgreementId,
    pub dataset_id: DatasetId,
    pub provider_id: PrincipalId,
    pub consumer_id: PrincipalId,
    pub granted_at: DateTime<Utc>,
    pub expires_at: DateTime<Utc>,
    pub status: AgreementStatus,
}

impl SharingAgreement {
    /// Status as observed at `now`: an active agreement past its expiry reads as expired.
    pub fn status_at(&self, now: DateTime<Utc>) -> AgreementStatus {
        match self.status {
            AgreementStatus::Active if now >= self.expires_at => AgreementStatus::Expired,
            s => s,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum AgreementError {
    #[error("not-owner: {0} does not own the dataset")]
    NotOwner(PrincipalId),
    #[error("not-active: agreement {0} is not active")]
    NotActive(AgreementId),
    #[error("unknown agreement {0}")]
    Unknown(AgreementId),
    #[error("ttl must be positive")]
    InvalidTtl,
    #[error("agreement ledger io: {0}")]
    Io(#[from] io::Error),
}

/// Provider-granted sharing agreements. Every mutation appends the full agreement
/// snapshot to the ledger file; replay keeps the last snapshot per id.
pub struct AgreementLedger {
    inner: Mutex<LedgerState>,
}

struct LedgerState {
    agreements: BTreeMap<AgreementId, SharingAgreement>,
    order: Vec<AgreementId>,
    log: Option<RecordLog>,
}

impl LedgerState {
    fn store(&mut self, a: SharingAgreement) -> Result<(), AgreementError> {
        if let Some(log) = &mut self.log {
            log.append(&a)?;
        }
        if !self.agreements.contains_key(&a.agreement_id) {
            self.order.push(a.agreement_id);
        }
        self.agreements.insert(a.agreement_id, a);
        Ok(())
    }
}

impl AgreementLedger {
    pub fn in_memory() -> Self {
        Self {
            inner: Mutex::new(LedgerState {
                agreements: BTreeMap::new(),
                order: Vec::new(),
                log: None,
            }),
        }
    }

    pub fn open(path: &Path) -> Result<Self, AgreementError> {
        let mut state = LedgerState {
            agreements: BTreeMap::new(),
            order: Vec::new(),
            log: None,
        };
        for a in jsonl::read_records::<SharingAgreement>(path)? {
            state.store(a)?;
        }
        state.log = Some(RecordLog::open(path)?);
        Ok(Self {
            inner: Mutex::new(state),
        })
    }

    /// `dataset_owner` is the catalogue's recorded owner of `dataset_id`.
    pub fn grant(
        &self,
        provider_id: &PrincipalId,
        consumer_id: &PrincipalId,
        dataset_id: DatasetId,
        dataset_owner: &PrincipalId,
        ttl: Duration,
        now: DateTime<Utc>,
    ) -> Result<SharingAgreement, AgreementError> {
        if provider_id != dataset_owner {
            return Err(AgreementError::NotOwner(provider_id.clone()));
        }
        if ttl <= Duration::zero() {
            return Err(AgreementError::InvalidTtl);
        }
        let agreement = SharingAgreement {
            agreement_id: AgreementId::new(),
            dataset_id,
            provider_id: provider_id.clone(),
            consumer_id: consumer_id.clone(),
            granted_at: now,
            expires_at: now + ttl,
            status: AgreementStatus::Active,
        };
        self.inner
            .lock()
            .expect("ledger lock")
            .store(agreement.clone())?;
        Ok(agreement)
    }

    pub fn revoke(
        &self,
        agreement_id: AgreementId,
        now: DateTime<Utc>,
    ) -> Result<SharingAgreement, AgreementError> {
        let mut state = self.inner.lock().expect("ledger lock");
        let mut a = state
            .agreements
            .get(&agreement_id)
            .cloned()
            .ok_or(AgreementError::Unknown(agreement_id))?;
        match a.status_at(now) {
            AgreementStatus::Active => {}
            AgreementStatus::Expired => {
                if a.status == AgreementStatus::Active {
                    a.status = AgreementStatus::Expired;
                    state.store(a)?;
                }
                return Err(AgreementError::NotActive(agreement_id));
            }
            AgreementStatus::Revoked => return Err(AgreementError::NotActive(agreement_id)),
        }
        a.status = AgreementStatus::Revoked;
        state.store(a.clone())?;
        Ok(a)
    }

    /// Persists active→expired for every agreement past its expiry.
    pub fn expire_due(&self, now: DateTime<Utc>) -> Result<usize, AgreementError> {
        let mut state = self.inner.lock().expect("ledger lock");
        let due: Vec<SharingAgreement> = state
            .agreements
            .values()
            .filter(|a| a.status == AgreementStatus::Active && now >= a.expires_at)
            .cloned()
            .collect();
        for mut a in due.iter().cloned() {
            a.status = AgreementStatus::Expired;
            state.store(a)?;
        }
        Ok(due.len())
    }

    pub fn get(&self, agreement_id: &AgreementId) -> Option<SharingAgreement> {
        self.inner
            .lock()
            .expect("ledger lock")
            .agreements
            .get(agreement_id)
            .cloned()
    }

    /// Agreements where `principal` is provider or consumer, in grant order.
    pub fn list_for(&self, principal: &PrincipalId) -> Vec<SharingAgreement> {
        let state = self.inner.lock().expect("ledger lock");
        state
            .order
            .iter()
            .filter_map(|id| state.agreements.get(id))
            .filter(|a| &a.provider_id == principal || &a.consumer_id == principal)
            .cloned()
            .collect()
    }

    /// Most recent agreement binding `consumer` to `dataset`, whatever its status.
    pub fn latest_for(&self, consumer: &PrincipalId, dataset: &DatasetId) -> Option<SharingAgreement> {
        let state = self.inner.lock().expect("ledger lock");
        state
            .order
            .iter()
            .rev()
            .filter_map(|id| state.agreements.get(id))
            .find(|a| &a.consumer_id == consumer && &a.dataset_id == dataset)
            .cloned()
    }

    /// True when `consumer` holds an agreement for `dataset` that is active at `now`.
    pub fn has_active(&self, consumer: &PrincipalId, dataset: &DatasetId, now: DateTime<Utc>) -> bool {
        let state = self.inner.lock().expect("ledger lock");
        state.agreements.values().any(|a| {
            &a.consumer_id == consumer
                && &a.dataset_id == dataset
                && a.status_at(now) == AgreementStatus::Active
        })
    }
}
