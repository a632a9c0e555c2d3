//! Request and response bodies of the platform API, shared by the coordinator and its
//! clients.

use serde::{Deserialize, Serialize};

use crate::analytics::{AlgorithmSpec, ChartSpec};
use crate::dataprep::{PrepPipeline, Schema};
use crate::ids::{DatasetId, KeyId, PrincipalId, WorkflowId};
use crate::scheduler::Schedule;

pub const PAGE_SIZE: usize = 100;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
    pub correlation_id: String,
    /// Failing pipeline step, for workflow validation errors.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Page<T> {
    pub items: Vec<T>,
    pub next_cursor: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub version: String,
}

/// Asks the coordinator for a fresh dataset key. The key comes back sealed to the
/// caller's API token under this nonce.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyRequest {
    #[serde(with = "hex::serde")]
    pub request_nonce: [u8; 16],
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyIssued {
    pub key_id: KeyId,
    pub owner_id: PrincipalId,
    #[serde(with = "hex::serde")]
    pub sealed_key: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetUpload {
    pub name: String,
    pub schema: Schema,
    pub row_count: u64,
    /// Standard base64 of the envelope bytes.
    pub envelope: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GrantRequest {
    pub dataset_id: DatasetId,
    pub consumer_id: PrincipalId,
    pub ttl_secs: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkflowRequest {
    #[serde(default)]
    pub name: String,
    pub inputs: Vec<DatasetId>,
    pub pipeline: PrepPipeline,
    pub algorithm: AlgorithmSpec,
    pub visualization: ChartSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub output_schema: Schema,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApplicationRequest {
    pub name: String,
    pub workflow_id: WorkflowId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobRequest {
    pub workflow_id: WorkflowId,
    pub schedule: Schedule,
}
