//! Encryption and decryption management: envelopes, the key registry, sharing
//! agreements, audited key release and the confidential release channel.

mod agreements;
mod audit;
pub mod channel;
pub mod envelope;
mod registry;
mod release;

use std::fmt;

use chrono::{DateTime, Utc};
use rand::rngs::OsRng;
use rand::RngCore;
use zeroize::Zeroizing;

use crate::ids::{KeyId, PrincipalId};

pub use agreements::{AgreementError, AgreementLedger, AgreementStatus, SharingAgreement};
pub use audit::{AuditEntry, AuditLog, AuditOutcome};
pub use envelope::{decrypt, encrypt, EncryptedEnvelope};
pub use registry::{KeyRegistry, RegistryError};
pub use release::{
    ChannelContext, DatasetKeyBinding, DenialReason, KeyReleaseRequest, KeyReleaseResponse,
    KeyReleaseService, ReleaseOutcome,
};

pub const KEY_LEN: usize = 32;

#[derive(Debug, thiserror::Error)]
pub enum CryptoError {
    #[error("integrity-failure: authentication tag or digest mismatch")]
    IntegrityFailure,
    #[error("wrong-key: envelope sealed under {expected}, got {found}")]
    WrongKey { expected: KeyId, found: KeyId },
    #[error("entropy-unavailable")]
    EntropyUnavailable,
    #[error("malformed envelope: {0}")]
    Malformed(String),
}

/// A 256-bit AES key. The key bytes are zeroed on drop and never printed.
#[derive(Clone)]
pub struct SymmetricKey {
    pub key_id: KeyId,
    pub owner_id: PrincipalId,
    pub created_at: DateTime<Utc>,
    key_bytes: Zeroizing<[u8; KEY_LEN]>,
}

impl SymmetricKey {
    pub fn generate(owner_id: PrincipalId) -> Result<Self, CryptoError> {
        let mut bytes = Zeroizing::new([0u8; KEY_LEN]);
        OsRng
            .try_fill_bytes(bytes.as_mut())
            .map_err(|_| CryptoError::EntropyUnavailable)?;
        Ok(Self {
            key_id: KeyId::new(),
            owner_id,
            created_at: Utc::now(),
            key_bytes: bytes,
        })
    }

    pub fn from_parts(key_id: KeyId, owner_id: PrincipalId, key_bytes: [u8; KEY_LEN]) -> Self {
        Self {
            key_id,
            owner_id,
            created_at: Utc::now(),
            key_bytes: Zeroizing::new(key_bytes),
        }
    }

    pub fn key_bytes(&self) -> &[u8; KEY_LEN] {
        &self.key_bytes
    }
}

impl fmt::Debug for SymmetricKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SymmetricKey")
            .field("key_id", &self.key_id)
            .field("owner_id", &self.owner_id)
            .finish_non_exhaustive()
    }
}
