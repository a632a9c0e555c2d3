//! Coordinator service and sandbox worker for the analytics platform.
//!
//! The coordinator serves the platform API to principals and a separate worker API to
//! sandboxes, dispatches jobs and watches sandbox liveness. Workers never see keys
//! other than those released to them for the plan they run.

pub mod coordinator;
pub mod error;
pub mod http;
pub mod launcher;
pub mod runtime;
pub mod state;

pub use coordinator::{Coordinator, CoordinatorError, CoordinatorOptions};
