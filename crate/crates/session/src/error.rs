use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde_json::json;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SessionError {
    #[error("seat {0:?} is already taken")]
    SeatTaken(String),
    #[error("bad scenario: {0}")]
    BadScenario(String),
    #[error("wrong phase: {0}")]
    WrongPhase(String),
    #[error("illegal target: {0}")]
    IllegalTarget(String),
    #[error("session expired")]
    SessionExpired,
    #[error("unknown session {0:?}")]
    NotFound(String),
    #[error("missing or invalid token")]
    Unauthorized,
    #[error("spectators cannot act")]
    Forbidden,
    #[error("bad request: {0}")]
    BadRequest(String),
}

impl SessionError {
    pub fn code(&self) -> &'static str {
        match self {
            SessionError::SeatTaken(_) => "seat_taken",
            SessionError::BadScenario(_) => "bad_scenario",
            SessionError::WrongPhase(_) => "wrong_phase",
            SessionError::IllegalTarget(_) => "illegal_target",
            SessionError::SessionExpired => "session_expired",
            SessionError::NotFound(_) => "not_found",
            SessionError::Unauthorized => "unauthorized",
            SessionError::Forbidden => "forbidden",
            SessionError::BadRequest(_) => "bad_request",
        }
    }

    pub fn status(&self) -> StatusCode {
        match self {
            SessionError::SeatTaken(_) | SessionError::WrongPhase(_) => StatusCode::CONFLICT,
            SessionError::BadScenario(_) | SessionError::BadRequest(_) => StatusCode::BAD_REQUEST,
            SessionError::IllegalTarget(_) => StatusCode::UNPROCESSABLE_ENTITY,
            SessionError::SessionExpired => StatusCode::GONE,
            SessionError::NotFound(_) => StatusCode::NOT_FOUND,
            SessionError::Unauthorized => StatusCode::UNAUTHORIZED,
            SessionError::Forbidden => StatusCode::FORBIDDEN,
        }
    }
}

impl IntoResponse for SessionError {
    fn into_response(self) -> Response {
        (self.status(), Json(json!({"error": self.code(), "message": self.to_string()}))).into_response()
    }
}
