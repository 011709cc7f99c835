//! The uniform `{code, message, detail}` error body.

use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use nightfield::fieldmap::{FieldError, ScenarioError};
use nightfield::footprint::FootprintError;
use nightfield::optimizer::OptimizeError;
use nightfield::scenario_io::{ImportError, StoreError};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

/// Wire shape of every non-2xx JSON response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
    #[serde(default)]
    pub detail: Value,
}

#[derive(Debug, Clone)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: ErrorBody,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self { status, body: ErrorBody { code: code.into(), message: message.into(), detail: Value::Null } }
    }

    pub fn with_detail(mut self, detail: Value) -> Self {
        self.body.detail = detail;
        self
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }

    pub fn unprocessable(code: &str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, code, message)
    }

    pub fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        if self.status.is_server_error() {
            tracing::error!(code = %self.body.code, "{}", self.body.message);
        }
        (self.status, Json(self.body)).into_response()
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        let msg = e.to_string();
        match e {
            StoreError::NotFound(_) | StoreError::InvalidId(_) => Self::not_found(msg),
            StoreError::AlreadyExists(id) => Self::new(StatusCode::CONFLICT, "already_exists", msg).with_detail(json!({ "id": id })),
            StoreError::StaleRevision { expected, actual, .. } => {
                Self::new(StatusCode::CONFLICT, "stale_revision", msg).with_detail(json!({ "expected": expected, "actual": actual }))
            }
            StoreError::CorruptDocument { .. } => Self::new(StatusCode::INTERNAL_SERVER_ERROR, "corrupt_document", msg),
            StoreError::UnsupportedVersion(_) | StoreError::Io(_) => Self::internal(msg),
        }
    }
}

impl From<ScenarioError> for ApiError {
    fn from(e: ScenarioError) -> Self {
        Self::unprocessable("invalid_scenario", e.to_string())
    }
}

impl From<FieldError> for ApiError {
    fn from(e: FieldError) -> Self {
        match e {
            FieldError::InvalidTile { .. } => Self::bad_request(e.to_string()),
            _ => Self::unprocessable("invalid_field_request", e.to_string()),
        }
    }
}

impl From<FootprintError> for ApiError {
    fn from(e: FootprintError) -> Self {
        Self::unprocessable("invalid_footprint_request", e.to_string())
    }
}

impl From<ImportError> for ApiError {
    fn from(e: ImportError) -> Self {
        match e {
            ImportError::InvalidDefaultProfile(_) => Self::unprocessable("invalid_import", e.to_string()),
            _ => Self::new(StatusCode::BAD_REQUEST, "malformed_import", e.to_string()),
        }
    }
}

impl From<OptimizeError> for ApiError {
    fn from(e: OptimizeError) -> Self {
        match e {
            OptimizeError::Infeasible { max_violation } => {
                Self::unprocessable("infeasible", e.to_string()).with_detail(json!({ "max_violation": max_violation }))
            }
            OptimizeError::Solver(_) => Self::internal(e.to_string()),
            _ => Self::unprocessable("invalid_spec", e.to_string()),
        }
    }
}
