use std::collections::HashMap;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::analytics::{AlgorithmSpec, AnalyticsError, ChartSpec};
use crate::dataprep::{validate_pipeline, PrepError, PrepPipeline, Schema};
use crate::ids::{ApplicationId, DatasetId, PrincipalId, WorkflowId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkflowDefinition {
    pub workflow_id: WorkflowId,
    pub owner_id: PrincipalId,
    #[serde(default)]
    pub name: String,
    pub inputs: Vec<DatasetId>,
    pub pipeline: PrepPipeline,
    pub algorithm: AlgorithmSpec,
    pub visualization: ChartSpec,
    pub created_at: DateTime<Utc>,
}

impl WorkflowDefinition {
    /// Deep copy with a fresh id, as produced by instantiating an application.
    pub fn fresh_copy(&self, now: DateTime<Utc>) -> Self {
        Self { workflow_id: WorkflowId::new(), created_at: now, ..self.clone() }
    }

    /// True when the content (everything except id and timestamp) matches.
    pub fn same_content(&self, other: &Self) -> bool {
        self.owner_id == other.owner_id
            && self.name == other.name
            && self.inputs == other.inputs
            && self.pipeline == other.pipeline
            && self.algorithm == other.algorithm
            && self.visualization == other.visualization
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApplicationRecord {
    pub application_id: ApplicationId,
    pub owner_id: PrincipalId,
    pub name: String,
    pub workflow: WorkflowDefinition,
    pub saved_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum WorkflowError {
    #[error("invalid workflow: {0}")]
    Invalid(String),
    #[error("invalid workflow: {0}")]
    Prep(#[from] PrepError),
    #[error("invalid workflow: {0}")]
    Analytics(#[from] AnalyticsError),
    #[error("unknown dataset {0}")]
    UnknownDataset(DatasetId),
    #[error("no active agreement for dataset {0}")]
    MissingAgreement(DatasetId),
}

impl WorkflowError {
    pub fn code(&self) -> &'static str {
        match self {
            Self::MissingAgreement(_) => "missing-agreement",
            _ => "invalid-workflow",
        }
    }
}

/// What the validator needs to know about each referenced dataset.
pub struct InputInfo {
    pub schema: Schema,
    /// The workflow owner owns the dataset or holds an active agreement for it.
    pub accessible: bool,
}

/// Checks dataset references, access, the pipeline and the algorithm and chart specs.
/// Returns the prepared table's schema.
pub fn validate_workflow(
    workflow: &WorkflowDefinition,
    lookup: impl Fn(&DatasetId) -> Option<InputInfo>,
) -> Result<Schema, WorkflowError> {
    if workflow.inputs.is_empty() {
        return Err(WorkflowError::Invalid("no input datasets".into()));
    }
    if workflow.pipeline.inputs != workflow.inputs {
        return Err(WorkflowError::Invalid("pipeline inputs differ from workflow inputs".into()));
    }
    let mut schemas = HashMap::new();
    for id in &workflow.inputs {
        let info = lookup(id).ok_or(WorkflowError::UnknownDataset(*id))?;
        if !info.accessible {
            return Err(WorkflowError::MissingAgreement(*id));
        }
        schemas.insert(*id, info.schema);
    }
    let out = validate_pipeline(&schemas, &workflow.pipeline)?;
    workflow.algorithm.validate(&out)?;
    let chart = &workflow.visualization;
    if chart.result_table.is_none() {
        for c in std::iter::once(&chart.x).chain(&chart.y) {
            if out.type_of(c).is_none() {
                return Err(AnalyticsError::UnknownColumn(c.clone()).into());
            }
        }
    }
    Ok(out)
}
