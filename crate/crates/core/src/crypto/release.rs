use std::sync::Arc;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::{AgreementLedger, AgreementStatus, AuditEntry, AuditLog, AuditOutcome, KeyRegistry, SymmetricKey};
use crate::ids::{AgreementId, DatasetId, KeyId, PrincipalId};

/// What the transport layer established about the peer before the request arrived.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChannelContext {
    pub peer: Option<PrincipalId>,
    pub mutually_authenticated: bool,
    pub confidential: bool,
}

impl ChannelContext {
    pub fn authenticated(peer: PrincipalId) -> Self {
        Self {
            peer: Some(peer),
            mutually_authenticated: true,
            confidential: true,
        }
    }

    pub fn unauthenticated() -> Self {
        Self {
            peer: None,
            mutually_authenticated: false,
            confidential: false,
        }
    }

    fn proves(&self, requester: &PrincipalId) -> bool {
        self.mutually_authenticated && self.confidential && self.peer.as_ref() == Some(requester)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyReleaseRequest {
    pub key_id: KeyId,
    pub requester_id: PrincipalId,
    /// Absent when the requester owns the key (result decryption for the job owner).
    pub agreement_id: Option<AgreementId>,
    #[serde(with = "hex::serde")]
    pub request_nonce: [u8; 16],
}

impl KeyReleaseRequest {
    pub fn new(key_id: KeyId, requester_id: PrincipalId, agreement_id: Option<AgreementId>) -> Self {
        use rand::RngCore;
        let mut request_nonce = [0u8; 16];
        rand::rngs::OsRng.fill_bytes(&mut request_nonce);
        Self {
            key_id,
            requester_id,
            agreement_id,
            request_nonce,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DenialReason {
    DeniedNoAgreement,
    DeniedRevoked,
    DeniedExpired,
    DeniedUnauthenticated,
}

impl DenialReason {
    pub fn code(self) -> &'static str {
        match self {
            Self::DeniedNoAgreement => "denied-no-agreement",
            Self::DeniedRevoked => "denied-revoked",
            Self::DeniedExpired => "denied-expired",
            Self::DeniedUnauthenticated => "denied-unauthenticated",
        }
    }
}

#[derive(Debug, Clone)]
pub enum ReleaseOutcome {
    /// Key material; must only be handed to the authenticated channel.
    Granted(SymmetricKey),
    Denied(DenialReason),
}

#[derive(Debug, Clone)]
pub struct KeyReleaseResponse {
    pub request_nonce: [u8; 16],
    pub outcome: ReleaseOutcome,
}

impl KeyReleaseResponse {
    pub fn key(&self) -> Option<&SymmetricKey> {
        match &self.outcome {
            ReleaseOutcome::Granted(k) => Some(k),
            ReleaseOutcome::Denied(_) => None,
        }
    }

    pub fn denial(&self) -> Option<DenialReason> {
        match self.outcome {
            ReleaseOutcome::Denied(r) => Some(r),
            ReleaseOutcome::Granted(_) => None,
        }
    }
}

/// Resolves which key seals a dataset's envelope.
pub trait DatasetKeyBinding: Send + Sync {
    fn key_for_dataset(&self, dataset_id: &DatasetId) -> Option<KeyId>;
}

/// The key-release authority. Every call appends exactly one audit entry.
pub struct KeyReleaseService {
    registry: Arc<KeyRegistry>,
    agreements: Arc<AgreementLedger>,
    audit: Arc<AuditLog>,
    bindings: Arc<dyn DatasetKeyBinding>,
}

impl KeyReleaseService {
    pub fn new(
        registry: Arc<KeyRegistry>,
        agreements: Arc<AgreementLedger>,
        audit: Arc<AuditLog>,
        bindings: Arc<dyn DatasetKeyBinding>,
    ) -> Self {
        Self {
            registry,
            agreements,
            audit,
            bindings,
        }
    }

    pub fn release_key(
        &self,
        request: &KeyReleaseRequest,
        channel: &ChannelContext,
        now: DateTime<Utc>,
    ) -> KeyReleaseResponse {
        let (outcome, reason) = self.decide(request, channel, now);
        let entry = AuditEntry {
            timestamp: now,
            requester_id: request.requester_id.clone(),
            key_id: request.key_id,
            agreement_id: request.agreement_id,
            outcome: match outcome {
                ReleaseOutcome::Granted(_) => AuditOutcome::Granted,
                ReleaseOutcome::Denied(_) => AuditOutcome::Denied,
            },
            reason,
        };
        if let Err(e) = self.audit.append(entry) {
            // Without an audit record the release must not happen.
            tracing::error!("audit append failed: {e}");
            return KeyReleaseResponse {
                request_nonce: request.request_nonce,
                outcome: ReleaseOutcome::Denied(DenialReason::DeniedUnauthenticated),
            };
        }
        KeyReleaseResponse {
            request_nonce: request.request_nonce,
            outcome,
        }
    }

    fn decide(
        &self,
        request: &KeyReleaseRequest,
        channel: &ChannelContext,
        now: DateTime<Utc>,
    ) -> (ReleaseOutcome, String) {
        use DenialReason::*;
        let deny = |r: DenialReason, why: &str| (ReleaseOutcome::Denied(r), format!("{}: {why}", r.code()));

        if !channel.proves(&request.requester_id) {
            return deny(DeniedUnauthenticated, "channel does not authenticate requester");
        }
        let Some(key) = self.registry.get(&request.key_id) else {
            return deny(DeniedNoAgreement, "unknown key");
        };
        if key.owner_id == request.requester_id {
            return (ReleaseOutcome::Granted(key), "owner".into());
        }
        let Some(agreement_id) = request.agreement_id else {
            return deny(DeniedNoAgreement, "no agreement referenced");
        };
        let Some(agreement) = self.agreements.get(&agreement_id) else {
            return deny(DeniedNoAgreement, "unknown agreement");
        };
        if agreement.consumer_id != request.requester_id {
            return deny(DeniedNoAgreement, "agreement bound to another consumer");
        }
        if self.bindings.key_for_dataset(&agreement.dataset_id) != Some(request.key_id) {
            return deny(DeniedNoAgreement, "agreement does not cover this key");
        }
        match agreement.status_at(now) {
            AgreementStatus::Revoked => deny(DeniedRevoked, "agreement revoked"),
            AgreementStatus::Expired => deny(DeniedExpired, "agreement expired"),
            AgreementStatus::Active => (ReleaseOutcome::Granted(key), "active agreement".into()),
        }
    }
}
