use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::{Deserialize, Serialize};

use crate::bpmn::{Diagnostic, ParseError};
use crate::engine::{CancelError, EngineError, StartError};
use crate::journal::JournalError;
use crate::registry::{DeployError, RegistryError};

/// Error body returned by every endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ApiError {
    pub http_status: u16,
    pub code: String,
    pub detail: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub diagnostics: Vec<Diagnostic>,
}

impl ApiError {
    pub fn new(http_status: u16, code: &str, detail: impl Into<String>) -> Self {
        Self {
            http_status,
            code: code.to_string(),
            detail: detail.into(),
            diagnostics: Vec::new(),
        }
    }

    fn with_diagnostics(mut self, diagnostics: Vec<Diagnostic>) -> Self {
        self.diagnostics = diagnostics;
        self
    }

    pub fn malformed(detail: impl Into<String>) -> Self {
        Self::new(400, "MALFORMED_REQUEST", detail)
    }

    pub fn not_found(code: &str, detail: impl Into<String>) -> Self {
        Self::new(404, code, detail)
    }
}

impl std::fmt::Display for ApiError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} {}: {}", self.http_status, self.code, self.detail)
    }
}

impl std::error::Error for ApiError {}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.http_status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self)).into_response()
    }
}

impl From<JournalError> for ApiError {
    fn from(e: JournalError) -> Self {
        match e {
            JournalError::IoFailure(_) => Self::new(503, "JOURNAL_FAILURE", e.to_string()),
            JournalError::Corrupt { .. } => Self::new(500, "JOURNAL_CORRUPT", e.to_string()),
        }
    }
}

impl From<ParseError> for ApiError {
    fn from(e: ParseError) -> Self {
        let code = match &e {
            ParseError::XmlMalformed(_) => "XML_MALFORMED",
            ParseError::UnsupportedElement { .. } => "UNSUPPORTED_ELEMENT",
            ParseError::MissingAttribute { .. } => "MISSING_ATTRIBUTE",
            ParseError::InvalidAttribute { .. } => "INVALID_ATTRIBUTE",
            ParseError::InvariantViolation(d) => {
                return Self::new(400, "INVALID_DEFINITION", e.to_string()).with_diagnostics(d.clone())
            }
        };
        Self::new(400, code, e.to_string())
    }
}

impl From<DeployError> for ApiError {
    fn from(e: DeployError) -> Self {
        match e {
            DeployError::Parse(p) => p.into(),
            DeployError::Invalid(ref d) => {
                let d = d.clone();
                Self::new(400, "INVALID_DEFINITION", e.to_string()).with_diagnostics(d)
            }
            DeployError::DuplicateVersion(_) => Self::new(409, "DUPLICATE_VERSION", e.to_string()),
            DeployError::Journal(j) => j.into(),
        }
    }
}

impl From<RegistryError> for ApiError {
    fn from(e: RegistryError) -> Self {
        let (status, code) = match &e {
            RegistryError::DuplicateVersion(_) => (409, "DUPLICATE_VERSION"),
            RegistryError::MalformedTarget(_) => (400, "MALFORMED_TARGET"),
            RegistryError::NotFound(_) => (404, "NOT_FOUND"),
            RegistryError::DuplicateFunction(_) => (409, "DUPLICATE_FUNCTION"),
            RegistryError::SpecInvalid(_) => (400, "SPEC_INVALID"),
            RegistryError::AlreadyRetired(_) => (409, "ALREADY_RETIRED"),
            RegistryError::Journal(j) => return j.clone().into(),
        };
        Self::new(status, code, e.to_string())
    }
}

impl From<StartError> for ApiError {
    fn from(e: StartError) -> Self {
        let (status, code) = match &e {
            StartError::WorkflowNotFound(_) => (404, "WORKFLOW_NOT_FOUND"),
            StartError::WorkflowRetired(_) => (409, "WORKFLOW_RETIRED"),
            StartError::DefinitionHasErrors(d) => {
                return Self::new(422, "DEFINITION_HAS_ERRORS", e.to_string()).with_diagnostics(d.clone())
            }
            StartError::UnresolvableService { .. } => (422, "UNRESOLVABLE_SERVICE"),
            StartError::UnknownPolicy { .. } => (422, "UNKNOWN_POLICY"),
            StartError::Journal(j) => return j.clone().into(),
        };
        Self::new(status, code, e.to_string())
    }
}

impl From<CancelError> for ApiError {
    fn from(e: CancelError) -> Self {
        match e {
            CancelError::NotFound(_) => Self::new(404, "INSTANCE_NOT_FOUND", e.to_string()),
            CancelError::NotRunning(_) => Self::new(409, "NOT_RUNNING", e.to_string()),
            CancelError::Journal(j) => j.into(),
        }
    }
}

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::UnknownInstance(_) => Self::new(404, "INSTANCE_NOT_FOUND", e.to_string()),
            EngineError::Journal(j) => j.into(),
            _ => Self::new(500, "INTERNAL", e.to_string()),
        }
    }
}
