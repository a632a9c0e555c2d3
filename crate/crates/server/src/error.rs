use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;

use seclab_core::api::ErrorBody;
use seclab_core::crypto::AgreementError;
use seclab_core::orchestrator::OrchestratorError;
use seclab_core::scheduler::{SchedulerError, WorkflowError};
use seclab_core::storage::StorageError;

/// An error answered to an API or worker caller as `{code, message, correlation_id}`.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: String,
    pub message: String,
    pub step: Option<usize>,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self { status, code: code.to_owned(), message: message.into(), step: None }
    }

    pub fn bad_request(code: &str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, code, message)
    }

    pub fn not_found(what: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not-found", what)
    }

    pub fn forbidden(code: &str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::FORBIDDEN, code, message)
    }

    pub fn conflict(code: &str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::CONFLICT, code, message)
    }

    pub fn unauthorized(code: &str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNAUTHORIZED, code, message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let correlation_id = uuid::Uuid::new_v4().simple().to_string();
        if self.status.is_server_error() {
            tracing::error!(%correlation_id, code = %self.code, "{}", self.message);
        } else {
            tracing::debug!(%correlation_id, code = %self.code, "{}", self.message);
        }
        let body = ErrorBody { code: self.code, message: self.message, correlation_id, step: self.step };
        (self.status, Json(body)).into_response()
    }
}

impl From<StorageError> for ApiError {
    fn from(e: StorageError) -> Self {
        let msg = e.to_string();
        match e {
            StorageError::AccessDenied => Self::forbidden("access-denied", msg),
            StorageError::InvalidPath(_) => Self::bad_request("invalid-path", msg),
            StorageError::NotFound(_) | StorageError::UnknownSpace(_) => Self::not_found(msg),
            StorageError::NotAnEnvelope(_) => Self::bad_request("not-an-envelope", msg),
            StorageError::DanglingEnvelope(_) => Self::bad_request("dangling-envelope", msg),
            StorageError::InvalidSchema(_) => Self::bad_request("invalid-schema", msg),
            StorageError::DuplicateSpace(_) => Self::conflict("duplicate-space", msg),
            StorageError::Io(_) => Self::internal(msg),
        }
    }
}

impl From<SchedulerError> for ApiError {
    fn from(e: SchedulerError) -> Self {
        let code = e.code();
        let msg = e.to_string();
        match e {
            SchedulerError::UnknownJob(_) => Self::new(StatusCode::NOT_FOUND, code, msg),
            SchedulerError::Io(_) => Self::internal(msg),
            _ => Self::conflict(code, msg),
        }
    }
}

impl From<AgreementError> for ApiError {
    fn from(e: AgreementError) -> Self {
        let msg = e.to_string();
        match e {
            AgreementError::NotOwner(_) => Self::forbidden("not-owner", msg),
            AgreementError::NotActive(_) => Self::conflict("not-active", msg),
            AgreementError::Unknown(_) => Self::not_found(msg),
            AgreementError::InvalidTtl => Self::bad_request("invalid-ttl", msg),
            AgreementError::Io(_) => Self::internal(msg),
        }
    }
}

impl From<WorkflowError> for ApiError {
    fn from(e: WorkflowError) -> Self {
        let mut err = match &e {
            WorkflowError::MissingAgreement(_) => Self::forbidden(e.code(), e.to_string()),
            _ => Self::bad_request(e.code(), e.to_string()),
        };
        if let WorkflowError::Prep(p) = &e {
            err.step = Some(p.step);
        }
        err
    }
}

impl From<OrchestratorError> for ApiError {
    fn from(e: OrchestratorError) -> Self {
        let code = e.code();
        let msg = e.to_string();
        match e {
            OrchestratorError::UnknownSandbox(_) => Self::new(StatusCode::NOT_FOUND, code, msg),
            OrchestratorError::AlreadyTerminated(_) => Self::conflict(code, msg),
            OrchestratorError::BadToken => Self::unauthorized(code, msg),
            OrchestratorError::BudgetExceeded(_) => Self::new(StatusCode::SERVICE_UNAVAILABLE, code, msg),
            _ => Self::internal(msg),
        }
    }
}
