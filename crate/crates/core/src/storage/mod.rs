//! Encrypted object store: one private space per owner, a dataset catalogue, and
//! sandbox-scoped roots.
//!
//! On-disk layout under `data_root`:
//!
//! ```text
//! spaces.jsonl                 space registry (token verifiers, never tokens)
//! catalogue.jsonl              dataset descriptors, one JSON record per line
//! spaces/<space_id>/<path>     objects
//! ```
//!
//! Objects under the `datasets/` and `results/` prefixes must be envelopes.

mod path;
mod scoped;

use std::collections::HashMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::crypto::envelope;
use crate::dataprep::Schema;
use crate::ids::{DatasetId, PrincipalId, SpaceId};
use crate::jsonl::{self, RecordLog};
use crate::token::BearerToken;

pub use path::{InvalidPath, ObjectPath};
pub use scoped::ScopedRoot;
pub(crate) use scoped::walk;

/// Path prefixes that may only hold envelopes.
pub const ENVELOPE_PREFIXES: [&str; 2] = ["datasets", "results"];

#[derive(Debug, thiserror::Error)]
pub enum StorageError {
    #[error("duplicate-space: {0} already owns a space")]
    DuplicateSpace(PrincipalId),
    #[error("access-denied")]
    AccessDenied,
    #[error(transparent)]
    InvalidPath(#[from] InvalidPath),
    #[error("not-found: {0}")]
    NotFound(String),
    #[error("not-an-envelope: {0}")]
    NotAnEnvelope(String),
    #[error("dangling-envelope: {0}")]
    DanglingEnvelope(String),
    #[error("invalid-schema: {0}")]
    InvalidSchema(String),
    #[error("unknown space {0}")]
    UnknownSpace(SpaceId),
    #[error("storage io: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrivateSpace {
    pub space_id: SpaceId,
    pub owner_id: PrincipalId,
    /// Namespace relative to the data root, `spaces/<space_id>`.
    pub root: String,
    pub created_at: DateTime<Utc>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SpaceRecord {
    #[serde(flatten)]
    space: PrivateSpace,
    #[serde(with = "hex::serde")]
    token_digest: [u8; 32],
}

/// Metadata of a stored object. Payload bytes are only returned by `get_object`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StorageObject {
    pub path: ObjectPath,
    #[serde(with = "hex::serde")]
    pub digest: [u8; 32],
    pub length: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetDescriptor {
    pub dataset_id: DatasetId,
    pub owner_id: PrincipalId,
    pub name: String,
    pub schema: Schema,
    pub row_count: u64,
    pub envelope_ref: ObjectPath,
    pub created_at: DateTime<Utc>,
}

pub fn validate_schema(schema: &Schema) -> Result<(), StorageError> {
    if let Some(dup) = schema.duplicate_name() {
        return Err(StorageError::InvalidSchema(format!("duplicate column {dup:?}")));
    }
    if schema.columns().iter().any(|c| c.name.is_empty()) {
        return Err(StorageError::InvalidSchema("empty column name".into()));
    }
    Ok(())
}

struct Spaces {
    by_id: HashMap<SpaceId, SpaceRecord>,
    by_owner: HashMap<PrincipalId, SpaceId>,
    log: RecordLog,
}

struct Catalogue {
    descriptors: Vec<DatasetDescriptor>,
    log: RecordLog,
}

pub struct SecureStorage {
    data_root: PathBuf,
    spaces: RwLock<Spaces>,
    catalogue: Mutex<Catalogue>,
}

impl SecureStorage {
    pub fn open(data_root: impl Into<PathBuf>) -> Result<Self, StorageError> {
        let data_root = data_root.into();
        fs::create_dir_all(data_root.join("spaces"))?;
        let spaces_path = data_root.join("spaces.jsonl");
        let mut by_id = HashMap::new();
        let mut by_owner = HashMap::new();
        for rec in jsonl::read_records::<SpaceRecord>(&spaces_path)? {
            by_owner.insert(rec.space.owner_id.clone(), rec.space.space_id);
            by_id.insert(rec.space.space_id, rec);
        }
        let cat_path = data_root.join("catalogue.jsonl");
        let descriptors = jsonl::read_records(&cat_path)?;
        Ok(Self {
            spaces: RwLock::new(Spaces {
                by_id,
                by_owner,
                log: RecordLog::open(spaces_path)?,
            }),
            catalogue: Mutex::new(Catalogue {
                descriptors,
                log: RecordLog::open(cat_path)?,
            }),
            data_root,
        })
    }

    pub fn data_root(&self) -> &Path {
        &self.data_root
    }

    pub fn create_space(
        &self,
        owner_id: &PrincipalId,
        now: DateTime<Utc>,
    ) -> Result<(PrivateSpace, BearerToken), StorageError> {
        let mut spaces = self.spaces.write().expect("spaces lock");
        if spaces.by_owner.contains_key(owner_id) {
            return Err(StorageError::DuplicateSpace(owner_id.clone()));
        }
        let space_id = SpaceId::new();
        let space = PrivateSpace {
            space_id,
            owner_id: owner_id.clone(),
            root: format!("spaces/{space_id}"),
            created_at: now,
        };
        fs::create_dir_all(self.data_root.join(&space.root))?;
        let token = BearerToken::generate();
        let rec = SpaceRecord {
            space: space.clone(),
            token_digest: token.digest(),
        };
        spaces.log.append(&rec)?;
        spaces.by_owner.insert(owner_id.clone(), space_id);
        spaces.by_id.insert(space_id, rec);
        Ok((space, token))
    }

    /// Replaces a space's token, invalidating the previous one. Used by the
    /// coordinator after a restart, since only token verifiers are persisted.
    pub fn reissue_token(&self, space_id: SpaceId) -> Result<BearerToken, StorageError> {
        let mut spaces = self.spaces.write().expect("spaces lock");
        let mut rec = spaces
            .by_id
            .get(&space_id)
            .cloned()
            .ok_or(StorageError::UnknownSpace(space_id))?;
        let token = BearerToken::generate();
        rec.token_digest = token.digest();
        spaces.log.append(&rec)?;
        spaces.by_id.insert(space_id, rec);
        Ok(token)
    }

    pub fn space_of(&self, owner_id: &PrincipalId) -> Option<PrivateSpace> {
        let spaces = self.spaces.read().expect("spaces lock");
        spaces
            .by_owner
            .get(owner_id)
            .and_then(|id| spaces.by_id.get(id))
            .map(|r| r.space.clone())
    }

    pub fn spaces(&self) -> Vec<PrivateSpace> {
        let spaces = self.spaces.read().expect("spaces lock");
        spaces.by_id.values().map(|r| r.space.clone()).collect()
    }

    fn authorize(&self, space_id: SpaceId, token: &BearerToken) -> Result<PrivateSpace, StorageError> {
        let spaces = self.spaces.read().expect("spaces lock");
        let rec = spaces.by_id.get(&space_id).ok_or(StorageError::AccessDenied)?;
        if !token.matches_digest(&rec.token_digest) {
            return Err(StorageError::AccessDenied);
        }
        Ok(rec.space.clone())
    }

    fn object_file(&self, space: &PrivateSpace, path: &ObjectPath) -> PathBuf {
        self.data_root.join(&space.root).join(path.as_str())
    }

    pub fn put_object(
        &self,
        space_id: SpaceId,
        path: &str,
        bytes: &[u8],
        token: &BearerToken,
    ) -> Result<StorageObject, StorageError> {
        let space = self.authorize(space_id, token)?;
        let path = ObjectPath::parse(path)?;
        if ENVELOPE_PREFIXES.iter().any(|p| path.starts_with_segment(p))
            && envelope::EncryptedEnvelope::from_bytes(bytes).is_err()
        {
            return Err(StorageError::NotAnEnvelope(path.to_string()));
        }
        let target = self.object_file(&space, &path);
        let parent = target.parent().expect("object files live under a space root");
        fs::create_dir_all(parent)?;
        let mut tmp = tempfile::NamedTempFile::new_in(parent)?;
        tmp.write_all(bytes)?;
        tmp.as_file().sync_data()?;
        tmp.persist(&target).map_err(|e| e.error)?;
        Ok(StorageObject {
            path,
            digest: Sha256::digest(bytes).into(),
            length: bytes.len() as u64,
        })
    }

    pub fn get_object(
        &self,
        space_id: SpaceId,
        path: &str,
        token: &BearerToken,
    ) -> Result<Vec<u8>, StorageError> {
        let space = self.authorize(space_id, token)?;
        let path = ObjectPath::parse(path)?;
        match fs::read(self.object_file(&space, &path)) {
            Ok(b) => Ok(b),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Err(StorageError::NotFound(path.to_string())),
            Err(e) => Err(e.into()),
        }
    }

    pub fn list_objects(&self, space_id: SpaceId, token: &BearerToken) -> Result<Vec<ObjectPath>, StorageError> {
        let space = self.authorize(space_id, token)?;
        let root = self.data_root.join(&space.root);
        let mut out = Vec::new();
        walk(&root, &mut |p| {
            if let Some(rel) = p.strip_prefix(&root).ok().and_then(|r| r.to_str()) {
                if let Ok(op) = ObjectPath::parse(rel) {
                    out.push(op);
                }
            }
        })?;
        out.sort();
        Ok(out)
    }

    /// Catalogues a dataset whose envelope is already stored in the owner's space.
    pub fn register_dataset(
        &self,
        descriptor: DatasetDescriptor,
        token: &BearerToken,
    ) -> Result<DatasetId, StorageError> {
        validate_schema(&descriptor.schema)?;
        let space = self.space_of(&descriptor.owner_id).ok_or(StorageError::AccessDenied)?;
        self.authorize(space.space_id, token)?;
        if !self.object_file(&space, &descriptor.envelope_ref).is_file() {
            return Err(StorageError::DanglingEnvelope(descriptor.envelope_ref.to_string()));
        }
        let mut cat = self.catalogue.lock().expect("catalogue lock");
        cat.log.append(&descriptor)?;
        let id = descriptor.dataset_id;
        cat.descriptors.push(descriptor);
        Ok(id)
    }

    /// Catalogue listing: metadata only, in registration order.
    pub fn list_datasets(&self, owner_filter: Option<&PrincipalId>) -> Vec<DatasetDescriptor> {
        let cat = self.catalogue.lock().expect("catalogue lock");
        cat.descriptors
            .iter()
            .filter(|d| owner_filter.map_or(true, |o| &d.owner_id == o))
            .cloned()
            .collect()
    }

    pub fn get_dataset(&self, dataset_id: &DatasetId) -> Option<DatasetDescriptor> {
        let cat = self.catalogue.lock().expect("catalogue lock");
        cat.descriptors.iter().find(|d| &d.dataset_id == dataset_id).cloned()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{self, SymmetricKey};
    use crate::dataprep::{ColumnDef, ColumnType};

    fn storage() -> (tempfile::TempDir, SecureStorage) {
        let dir = tempfile::tempdir().unwrap();
        let s = SecureStorage::open(dir.path()).unwrap();
        (dir, s)
    }

    #[test]
    fn one_space_per_owner() {
        let (_d, s) = storage();
        let (space, token) = s.create_space(&"A".into(), Utc::now()).unwrap();
        assert!(s.list_objects(space.space_id, &token).unwrap().is_empty());
        assert!(matches!(
            s.create_space(&"A".into(), Utc::now()),
            Err(StorageError::DuplicateSpace(_))
        ));
    }

    #[test]
    fn foreign_tokens_are_denied() {
        let (_d, s) = storage();
        let (a, ta) = s.create_space(&"A".into(), Utc::now()).unwrap();
        let (b, tb) = s.create_space(&"B".into(), Utc::now()).unwrap();
        assert_ne!(a.root, b.root);
        s.put_object(a.space_id, "notes/x", b"abc", &ta).unwrap();
        assert!(matches!(s.list_objects(a.space_id, &tb), Err(StorageError::AccessDenied)));
        assert!(matches!(s.get_object(a.space_id, "notes/x", &tb), Err(StorageError::AccessDenied)));
        assert!(matches!(s.put_object(a.space_id, "notes/y", b"abc", &tb), Err(StorageError::AccessDenied)));
        assert!(matches!(s.get_object(a.space_id, "nope", &ta), Err(StorageError::NotFound(_))));
    }

    #[test]
    fn digests_match_independent_values() {
        let (_d, s) = storage();
        let (a, t) = s.create_space(&"A".into(), Utc::now()).unwrap();
        let empty = s.put_object(a.space_id, "e", b"", &t).unwrap();
        assert_eq!(empty.length, 0);
        assert_eq!(
            hex::encode(empty.digest),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
        let abc = s.put_object(a.space_id, "abc", b"abc", &t).unwrap();
        assert_eq!(
            hex::encode(abc.digest),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        assert_eq!(s.get_object(a.space_id, "abc", &t).unwrap(), b"abc");
    }

    #[test]
    fn overwrite_replaces_whole_object_and_paths_cannot_escape() {
        let (_d, s) = storage();
        let (a, t) = s.create_space(&"A".into(), Utc::now()).unwrap();
        s.put_object(a.space_id, "x", b"long long payload", &t).unwrap();
        s.put_object(a.space_id, "x", b"short", &t).unwrap();
        assert_eq!(s.get_object(a.space_id, "x", &t).unwrap(), b"short");
        assert!(matches!(s.put_object(a.space_id, "../x", b"", &t), Err(StorageError::InvalidPath(_))));
    }

    #[test]
    fn dataset_prefix_requires_envelope() {
        let (_d, s) = storage();
        let (a, t) = s.create_space(&"A".into(), Utc::now()).unwrap();
        assert!(matches!(
            s.put_object(a.space_id, "datasets/raw.csv", b"a,b\n1,2\n", &t),
            Err(StorageError::NotAnEnvelope(_))
        ));
        let key = SymmetricKey::generate("A".into()).unwrap();
        let env = crypto::encrypt(b"a,b\n1,2\n", &key).unwrap().to_bytes();
        s.put_object(a.space_id, "datasets/d.env", &env, &t).unwrap();
    }

    fn descriptor(owner: &str, envelope_ref: &str, schema: Vec<ColumnDef>) -> DatasetDescriptor {
        DatasetDescriptor {
            dataset_id: DatasetId::new(),
            owner_id: owner.into(),
            name: "flights".into(),
            schema: Schema::new(schema),
            row_count: 42,
            envelope_ref: ObjectPath::parse(envelope_ref).unwrap(),
            created_at: Utc::now(),
        }
    }

    #[test]
    fn catalogue_registration_rules_and_persistence() {
        let dir = tempfile::tempdir().unwrap();
        let s = SecureStorage::open(dir.path()).unwrap();
        let (a, t) = s.create_space(&"A".into(), Utc::now()).unwrap();
        let key = SymmetricKey::generate("A".into()).unwrap();
        let env = crypto::encrypt(b"x,y\n", &key).unwrap().to_bytes();
        s.put_object(a.space_id, "datasets/d.env", &env, &t).unwrap();
        let cols = vec![
            ColumnDef::new("x", ColumnType::Int64),
            ColumnDef::new("y", ColumnType::Float64),
        ];
        let d = descriptor("A", "datasets/d.env", cols.clone());
        let id = s.register_dataset(d.clone(), &t).unwrap();
        assert_eq!(s.list_datasets(None), vec![d.clone()]);
        assert_eq!(s.list_datasets(Some(&"A".into()))[0].row_count, 42);
        assert!(s.list_datasets(Some(&"B".into())).is_empty());

        let dangling = descriptor("A", "datasets/missing.env", cols.clone());
        assert!(matches!(s.register_dataset(dangling, &t), Err(StorageError::DanglingEnvelope(_))));
        let dup = descriptor(
            "A",
            "datasets/d.env",
            vec![ColumnDef::new("x", ColumnType::Int64), ColumnDef::new("x", ColumnType::Bool)],
        );
        assert!(matches!(s.register_dataset(dup, &t), Err(StorageError::InvalidSchema(_))));
        drop(s);

        let s = SecureStorage::open(dir.path()).unwrap();
        assert_eq!(s.get_dataset(&id), Some(d));
        // tokens are not persisted; a reissued one works, the old one does not
        assert!(s.get_object(a.space_id, "datasets/d.env", &t).is_ok());
        let t2 = s.reissue_token(a.space_id).unwrap();
        assert!(s.get_object(a.space_id, "datasets/d.env", &t).is_err());
        assert!(s.get_object(a.space_id, "datasets/d.env", &t2).is_ok());
    }

    #[test]
    fn unknown_column_type_is_rejected_at_parse() {
        let bad = r#"[{"name":"a","type":"decimal"}]"#;
        assert!(serde_json::from_str::<Schema>(bad).is_err());
    }
}
