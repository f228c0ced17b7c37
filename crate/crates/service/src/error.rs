use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use landscape_core::store::StoreError;
use landscape_core::CsvError;
use serde::Serialize;

/// JSON error body: `{"error": message, ...detail}`.
#[derive(Debug, Serialize)]
pub struct ErrorBody {
    pub error: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub line: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub column: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: ErrorBody,
}

impl ApiError {
    pub fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            body: ErrorBody {
                error: message.into(),
                line: None,
                column: None,
                id: None,
            },
        }
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }

    pub fn not_found(id: &str) -> Self {
        let mut e = Self::new(StatusCode::NOT_FOUND, format!("no experiment with id `{id}`"));
        e.body.id = Some(id.to_string());
        e
    }

    pub fn conflict(id: &str) -> Self {
        let mut e = Self::new(StatusCode::CONFLICT, format!("experiment id `{id}` already exists"));
        e.body.id = Some(id.to_string());
        e
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

impl From<CsvError> for ApiError {
    fn from(e: CsvError) -> Self {
        let mut err = ApiError::bad_request(e.to_string());
        err.body.line = e.line();
        err.body.column = match &e {
            CsvError::MissingColumn { column } => Some(column.to_string()),
            CsvError::DuplicateColumn { column } => Some(column.clone()),
            CsvError::Number { column, .. } | CsvError::NonFiniteCoordinate { column, .. } => Some(column.to_string()),
            CsvError::EmptyId { .. } => Some("id".into()),
            _ => None,
        };
        if let CsvError::DuplicatePoint { id, .. } | CsvError::IncompleteGrid { id, .. } = &e {
            err.body.id = Some(id.clone());
        }
        err
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::Conflict(id) => ApiError::conflict(&id),
            StoreError::NotFound(id) => ApiError::not_found(&id),
            StoreError::EmptyId => ApiError::bad_request("experiment id must be nonempty"),
            other => ApiError::internal(other.to_string()),
        }
    }
}
