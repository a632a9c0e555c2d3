use std::collections::HashMap;
use std::io;
use std::path::Path;
use std::sync::{Mutex, RwLock};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::{envelope, CryptoError, SymmetricKey, KEY_LEN};
use crate::ids::{KeyId, PrincipalId};
use crate::jsonl::{self, RecordLog};

#[derive(Debug, thiserror::Error)]
pub enum RegistryError {
    #[error(transparent)]
    Crypto(#[from] CryptoError),
    #[error("key registry io: {0}")]
    Io(#[from] io::Error),
    #[error("unknown key {0}")]
    UnknownKey(KeyId),
}

/// Persisted form: the key bytes only ever hit disk sealed under the master key.
#[derive(Serialize, Deserialize)]
struct WrappedKey {
    key_id: KeyId,
    owner_id: PrincipalId,
    created_at: DateTime<Utc>,
    sealed: String,
}

/// Coordinator-held registry of dataset and result keys.
pub struct KeyRegistry {
    keys: RwLock<HashMap<KeyId, SymmetricKey>>,
    master: SymmetricKey,
    log: Option<Mutex<RecordLog>>,
}

impl KeyRegistry {
    /// Registry that lives only in memory.
    pub fn in_memory() -> Result<Self, RegistryError> {
        Ok(Self {
            keys: RwLock::new(HashMap::new()),
            master: SymmetricKey::generate(PrincipalId::from("registry"))?,
            log: None,
        })
    }

    /// Opens (or creates) a persistent registry whose records are sealed with `master_key`.
    pub fn open(path: &Path, master_key: [u8; KEY_LEN]) -> Result<Self, RegistryError> {
        let master = SymmetricKey::from_parts(
            KeyId::from_bytes([0u8; 16]),
            PrincipalId::from("registry"),
            master_key,
        );
        let mut keys = HashMap::new();
        for rec in jsonl::read_records::<WrappedKey>(path)? {
            let bytes = hex::decode(&rec.sealed)
                .map_err(|e| CryptoError::Malformed(format!("registry record: {e}")))?;
            let env = envelope::EncryptedEnvelope::from_bytes(&bytes)?;
            let plain = zeroize::Zeroizing::new(envelope::decrypt(&env, &master)?);
            let raw: [u8; KEY_LEN] = plain
                .as_slice()
                .try_into()
                .map_err(|_| CryptoError::Malformed("registry key length".into()))?;
            let mut key = SymmetricKey::from_parts(rec.key_id, rec.owner_id, raw);
            key.created_at = rec.created_at;
            keys.insert(rec.key_id, key);
        }
        Ok(Self {
            keys: RwLock::new(keys),
            master,
            log: Some(Mutex::new(RecordLog::open(path)?)),
        })
    }

    pub fn generate(&self, owner_id: PrincipalId) -> Result<SymmetricKey, RegistryError> {
        let key = SymmetricKey::generate(owner_id)?;
        self.persist(&key)?;
        self.keys
            .write()
            .expect("registry lock")
            .insert(key.key_id, key.clone());
        Ok(key)
    }

    fn persist(&self, key: &SymmetricKey) -> Result<(), RegistryError> {
        let Some(log) = &self.log else { return Ok(()) };
        let env = envelope::encrypt(key.key_bytes(), &self.master)?;
        let rec = WrappedKey {
            key_id: key.key_id,
            owner_id: key.owner_id.clone(),
            created_at: key.created_at,
            sealed: hex::encode(env.to_bytes()),
        };
        log.lock().expect("registry log lock").append(&rec)?;
        Ok(())
    }

    pub fn get(&self, key_id: &KeyId) -> Option<SymmetricKey> {
        self.keys.read().expect("registry lock").get(key_id).cloned()
    }

    pub fn owner_of(&self, key_id: &KeyId) -> Option<PrincipalId> {
        self.keys
            .read()
            .expect("registry lock")
            .get(key_id)
            .map(|k| k.owner_id.clone())
    }

    pub fn len(&self) -> usize {
        self.keys.read().expect("registry lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Raw bytes of every registered key. Used by leak scans in tests and the harness.
    pub fn export_key_material(&self) -> Vec<[u8; KEY_LEN]> {
        self.keys
            .read()
            .expect("registry lock")
            .values()
            .map(|k| *k.key_bytes())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn persists_sealed_and_reloads() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("keys.jsonl");
        let master = [7u8; 32];
        let reg = KeyRegistry::open(&path, master).unwrap();
        let k = reg.generate("alice".into()).unwrap();
        drop(reg);

        let on_disk = std::fs::read(&path).unwrap();
        assert!(!on_disk
            .windows(32)
            .any(|w| w == k.key_bytes().as_slice()));
        assert!(!String::from_utf8_lossy(&on_disk).contains(&hex::encode(k.key_bytes())));

        let reg = KeyRegistry::open(&path, master).unwrap();
        let back = reg.get(&k.key_id).unwrap();
        assert_eq!(back.key_bytes(), k.key_bytes());
        assert_eq!(reg.owner_of(&k.key_id).unwrap(), PrincipalId::from("alice"));

        assert!(KeyRegistry::open(&path, [8u8; 32]).is_err());
    }
}
