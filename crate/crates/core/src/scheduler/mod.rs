//! Workflow definitions, the job state machine and its persistent event log.

mod jobs;
mod workflow;

pub use jobs::{
    EventKind, JobBook, JobEvent, JobFailure, JobRecord, JobState, Schedule, SchedulerError, Transition, Updated,
};
pub use workflow::{validate_workflow, ApplicationRecord, InputInfo, WorkflowDefinition, WorkflowError};
