use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde_json::json;
use stormcrew_core::model::ModelError;
use stormcrew_core::planner::PlanError;
use thiserror::Error;

use crate::audit::AuditError;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("unknown AWC `{0}`")]
    UnknownAwc(String),
    #[error("no snapshot ingested yet")]
    NoSnapshot,
    #[error("no draft plan")]
    NoDraft,
    #[error("no published plan")]
    NoPlan,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("a solve is already in progress")]
    Busy,
    #[error("draft is {age_seconds:.0} s old, past the {threshold_seconds:.0} s limit; re-trigger or confirm_stale")]
    StalePlan { age_seconds: f64, threshold_seconds: f64 },
    #[error("draft `{requested}` is not the current draft `{current}`")]
    DraftMismatch { requested: String, current: String },
    #[error("outage {outage} is already locked to crew {crew}")]
    ConflictingLock { outage: String, crew: String },
    #[error("outage {0} is withheld")]
    Withheld(String),
    #[error("unknown crew {0}")]
    UnknownCrew(String),
    #[error("unknown outage {0}")]
    UnknownOutage(String),
    #[error("service is in fail-safe mode")]
    Failsafe,
    #[error("travel provider failed: {0}")]
    Provider(String),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("missing or wrong auth token")]
    Unauthorized,
    #[error(transparent)]
    Audit(#[from] AuditError),
    #[error("internal: {0}")]
    Internal(String),
}

impl ServiceError {
    /// Stable machine-readable name, used in responses and audit payloads.
    pub fn code(&self) -> &'static str {
        match self {
            ServiceError::UnknownAwc(_) => "unknown_awc",
            ServiceError::NoSnapshot => "no_snapshot",
            ServiceError::NoDraft => "no_draft",
            ServiceError::NoPlan => "no_plan",
            ServiceError::Model(ModelError::Schema(_)) => "schema_error",
            ServiceError::Model(ModelError::Invariant(_)) => "invariant_error",
            ServiceError::Model(ModelError::AwcMismatch(_)) => "awc_mismatch",
            ServiceError::Busy => "busy",
            ServiceError::StalePlan { .. } => "stale_plan",
            ServiceError::DraftMismatch { .. } => "draft_mismatch",
            ServiceError::ConflictingLock { .. } => "conflicting_lock",
            ServiceError::Withheld(_) => "withheld",
            ServiceError::UnknownCrew(_) => "unknown_crew",
            ServiceError::UnknownOutage(_) => "unknown_outage",
            ServiceError::Failsafe => "failsafe_mode",
            ServiceError::Provider(_) => "provider_failure",
            ServiceError::Plan(_) => "plan_error",
            ServiceError::BadRequest(_) => "bad_request",
            ServiceError::Unauthorized => "unauthorized",
            ServiceError::Audit(_) => "audit_failure",
            ServiceError::Internal(_) => "internal",
        }
    }

    pub fn status(&self) -> StatusCode {
        match self {
            ServiceError::UnknownAwc(_) | ServiceError::NoSnapshot | ServiceError::NoDraft | ServiceError::NoPlan => {
                StatusCode::NOT_FOUND
            }
            ServiceError::Model(_)
            | ServiceError::UnknownCrew(_)
            | ServiceError::UnknownOutage(_)
            | ServiceError::Plan(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ServiceError::Busy
            | ServiceError::StalePlan { .. }
            | ServiceError::DraftMismatch { .. }
            | ServiceError::ConflictingLock { .. }
            | ServiceError::Withheld(_) => StatusCode::CONFLICT,
            ServiceError::Failsafe | ServiceError::Provider(_) => StatusCode::SERVICE_UNAVAILABLE,
            ServiceError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ServiceError::Unauthorized => StatusCode::UNAUTHORIZED,
            ServiceError::Audit(_) | ServiceError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let body = json!({ "error": self.code(), "message": self.to_string() });
        (self.status(), Json(body)).into_response()
    }
}
