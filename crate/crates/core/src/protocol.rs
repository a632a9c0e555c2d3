//! Messages exchanged between the coordinator and sandbox workers.

use serde::{Deserialize, Serialize};

use crate::analytics::{AlgorithmSpec, ChartSpec, DataSeries, ResultSet};
use crate::crypto::KeyReleaseRequest;
use crate::dataprep::{PrepPipeline, Schema};
use crate::ids::{AgreementId, DatasetId, JobId, KeyId, PrincipalId, SandboxId, SpaceId};
use crate::scheduler::{JobFailure, JobState};
use crate::storage::ObjectPath;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ObjectRef {
    pub space_id: SpaceId,
    pub path: ObjectPath,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Instruction {
    FetchDataset { dataset_id: DatasetId, source: ObjectRef, schema: Schema },
    ObtainKey { dataset_id: DatasetId, key_id: KeyId, agreement_id: Option<AgreementId> },
    Decrypt { dataset_id: DatasetId },
    RunJob { pipeline: PrepPipeline, algorithm: AlgorithmSpec, visualization: ChartSpec },
    /// Seal the result document under the job owner's result key.
    EncryptResults { key_id: KeyId },
    UploadResults { destination: ObjectRef },
    Terminate,
}

impl Instruction {
    /// Ordering rank; a well-formed plan never decreases.
    pub fn rank(&self) -> u8 {
        match self {
            Self::FetchDataset { .. } => 0,
            Self::ObtainKey { .. } => 1,
            Self::Decrypt { .. } => 2,
            Self::RunJob { .. } => 3,
            Self::EncryptResults { .. } => 4,
            Self::UploadResults { .. } => 5,
            Self::Terminate => 6,
        }
    }

    /// The job phase reported when this instruction starts.
    pub fn phase(&self) -> Option<JobState> {
        match self {
            Self::FetchDataset { .. } => Some(JobState::Fetching),
            Self::ObtainKey { .. } | Self::Decrypt { .. } => Some(JobState::Decrypting),
            Self::RunJob { .. } => Some(JobState::Running),
            Self::EncryptResults { .. } => Some(JobState::EncryptingResults),
            Self::UploadResults { .. } => Some(JobState::Uploading),
            Self::Terminate => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerPlan {
    pub job_id: JobId,
    pub owner_id: PrincipalId,
    pub instructions: Vec<Instruction>,
}

impl WorkerPlan {
    /// Instructions appear in phase order and each per-dataset instruction at most once.
    pub fn is_well_ordered(&self) -> bool {
        let ranks_ok = self.instructions.windows(2).all(|w| w[0].rank() <= w[1].rank());
        let mut seen = std::collections::HashSet::new();
        let unique = self.instructions.iter().all(|i| match i {
            Instruction::FetchDataset { dataset_id, .. }
            | Instruction::ObtainKey { dataset_id, .. }
            | Instruction::Decrypt { dataset_id } => seen.insert((i.rank(), *dataset_id)),
            _ => seen.insert((i.rank(), DatasetId::from_bytes([0; 16]))),
        });
        ranks_ok && unique
    }

    /// Every object the plan may read or write, used to scope the sandbox token.
    pub fn object_refs(&self) -> Vec<&ObjectRef> {
        self.instructions
            .iter()
            .filter_map(|i| match i {
                Instruction::FetchDataset { source, .. } => Some(source),
                Instruction::UploadResults { destination } => Some(destination),
                _ => None,
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegisterRequest {
    pub sandbox_id: SandboxId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegisterAck {
    pub sandbox_id: SandboxId,
    pub owner_id: PrincipalId,
    pub heartbeat_interval_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Heartbeat {
    pub sandbox_id: SandboxId,
    pub job_id: Option<JobId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeartbeatAck {
    pub terminate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PollResponse {
    pub plan: Option<WorkerPlan>,
    pub terminate: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProgressReport {
    pub job_id: JobId,
    pub phase: JobState,
    pub error: Option<JobFailure>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProgressAck {
    pub state: JobState,
    /// False when the report repeated the current phase.
    pub changed: bool,
}

/// Body of a key-release call; sent as one length-prefixed frame.
pub type KeyReleaseCall = KeyReleaseRequest;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyReleaseReply {
    #[serde(with = "hex::serde")]
    pub request_nonce: [u8; 16],
    pub denial: Option<String>,
    pub owner_id: Option<PrincipalId>,
    /// Key material sealed to the requesting sandbox's token.
    #[serde(default, with = "opt_hex")]
    pub sealed_key: Option<Vec<u8>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UploadReceipt {
    pub result_ref: String,
}

/// The plaintext that the worker encrypts as a job result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultDocument {
    pub result_set: ResultSet,
    pub series: Option<DataSeries>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub series_error: Option<String>,
}

mod opt_hex {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<Vec<u8>>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(b) => s.serialize_some(&hex::encode(b)),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Vec<u8>>, D::Error> {
        Option::<String>::deserialize(d)?
            .map(|h| hex::decode(h).map_err(serde::de::Error::custom))
            .transpose()
    }
}
