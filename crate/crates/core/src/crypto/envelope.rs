//! Self-describing authenticated ciphertext container.
//!
//! Byte layout (all offsets fixed):
//!
//! ```text
//! magic "ICRS" (4) | version 0x01 (1) | key_id (16) | nonce (12)
//! | plaintext_length (8, big-endian) | plaintext_digest (32) | ciphertext || tag
//! ```

use aes_gcm::aead::{Aead, KeyInit};
use aes_gcm::{Aes256Gcm, Nonce};
use rand::rngs::OsRng;
use rand::RngCore;
use sha2::{Digest, Sha256};
use subtle::ConstantTimeEq;

use super::{CryptoError, SymmetricKey};
use crate::ids::KeyId;

pub const MAGIC: &[u8; 4] = b"ICRS";
pub const VERSION: u8 = 0x01;
pub const NONCE_LEN: usize = 12;
pub const TAG_LEN: usize = 16;
pub const HEADER_LEN: usize = 4 + 1 + 16 + NONCE_LEN + 8 + 32;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncryptedEnvelope {
    pub version: u8,
    pub key_id: KeyId,
    pub nonce: [u8; NONCE_LEN],
    pub plaintext_length: u64,
    pub plaintext_digest: [u8; 32],
    pub ciphertext_and_tag: Vec<u8>,
}

/// True when `bytes` starts with the envelope magic.
pub fn has_magic(bytes: &[u8]) -> bool {
    bytes.len() >= MAGIC.len() && &bytes[..MAGIC.len()] == MAGIC
}

impl EncryptedEnvelope {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.ciphertext_and_tag.len());
        out.extend_from_slice(MAGIC);
        out.push(self.version);
        out.extend_from_slice(self.key_id.as_bytes());
        out.extend_from_slice(&self.nonce);
        out.extend_from_slice(&self.plaintext_length.to_be_bytes());
        out.extend_from_slice(&self.plaintext_digest);
        out.extend_from_slice(&self.ciphertext_and_tag);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CryptoError> {
        if bytes.len() < HEADER_LEN + TAG_LEN {
            return Err(CryptoError::Malformed(format!(
                "envelope too short: {} bytes",
                bytes.len()
            )));
        }
        if !has_magic(bytes) {
            return Err(CryptoError::Malformed("bad magic".into()));
        }
        let version = bytes[4];
        if version != VERSION {
            return Err(CryptoError::Malformed(format!("unsupported version {version}")));
        }
        let key_id = KeyId::from_bytes(bytes[5..21].try_into().expect("16 bytes"));
        let nonce: [u8; NONCE_LEN] = bytes[21..33].try_into().expect("12 bytes");
        let plaintext_length = u64::from_be_bytes(bytes[33..41].try_into().expect("8 bytes"));
        let plaintext_digest: [u8; 32] = bytes[41..73].try_into().expect("32 bytes");
        Ok(Self {
            version,
            key_id,
            nonce,
            plaintext_length,
            plaintext_digest,
            ciphertext_and_tag: bytes[HEADER_LEN..].to_vec(),
        })
    }

    /// Reads only the key id from serialized envelope bytes.
    pub fn peek_key_id(bytes: &[u8]) -> Result<KeyId, CryptoError> {
        if bytes.len() < 21 || !has_magic(bytes) {
            return Err(CryptoError::Malformed("not an envelope".into()));
        }
        Ok(KeyId::from_bytes(bytes[5..21].try_into().expect("16 bytes")))
    }
}

/// Encrypts `plaintext` under `key` with a fresh random nonce.
pub fn encrypt(plaintext: &[u8], key: &SymmetricKey) -> Result<EncryptedEnvelope, CryptoError> {
    let mut nonce = [0u8; NONCE_LEN];
    OsRng
        .try_fill_bytes(&mut nonce)
        .map_err(|_| CryptoError::EntropyUnavailable)?;
    Ok(encrypt_with_nonce(plaintext, key, nonce))
}

/// Deterministic variant of [`encrypt`]. Reusing a nonce under one key breaks GCM;
/// only known-answer checks should call this directly.
pub fn encrypt_with_nonce(
    plaintext: &[u8],
    key: &SymmetricKey,
    nonce: [u8; NONCE_LEN],
) -> EncryptedEnvelope {
    let cipher = Aes256Gcm::new_from_slice(key.key_bytes()).expect("32-byte key");
    let ciphertext_and_tag = cipher
        .encrypt(Nonce::from_slice(&nonce), plaintext)
        .expect("AES-GCM encryption is infallible for in-memory buffers");
    EncryptedEnvelope {
        version: VERSION,
        key_id: key.key_id,
        nonce,
        plaintext_length: plaintext.len() as u64,
        plaintext_digest: Sha256::digest(plaintext).into(),
        ciphertext_and_tag,
    }
}

/// Authenticates and decrypts. Fails unless the tag verifies and the plaintext
/// matches both the recorded length and digest.
pub fn decrypt(envelope: &EncryptedEnvelope, key: &SymmetricKey) -> Result<Vec<u8>, CryptoError> {
    if envelope.key_id != key.key_id {
        return Err(CryptoError::WrongKey {
            expected: envelope.key_id,
            found: key.key_id,
        });
    }
    let cipher = Aes256Gcm::new_from_slice(key.key_bytes()).expect("32-byte key");
    let plaintext = cipher
        .decrypt(
            Nonce::from_slice(&envelope.nonce),
            envelope.ciphertext_and_tag.as_slice(),
        )
        .map_err(|_| CryptoError::IntegrityFailure)?;
    let digest: [u8; 32] = Sha256::digest(&plaintext).into();
    let digest_ok: bool = digest.ct_eq(&envelope.plaintext_digest).into();
    if !digest_ok || plaintext.len() as u64 != envelope.plaintext_length {
        return Err(CryptoError::IntegrityFailure);
    }
    Ok(plaintext)
}
