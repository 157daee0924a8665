use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use serde::{Deserialize, Serialize};

pub const REVISION_HEADER: &str = "x-agentguard-revision";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    pub code: String,
    pub message: String,
}

/// Body of every non-stream response. Exactly one of `data` and `error` is
/// present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiEnvelope<T> {
    pub ok: bool,
    #[serde(default = "none", skip_serializing_if = "Option::is_none")]
    pub data: Option<T>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ApiError>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub revision: Option<u64>,
}

fn none<T>() -> Option<T> {
    None
}

impl<T: Serialize> ApiEnvelope<T> {
    pub fn data(data: T, revision: Option<u64>) -> Self {
        Self {
            ok: true,
            data: Some(data),
            error: None,
            revision,
        }
    }

    pub fn into_response_with(self, status: StatusCode) -> Response {
        let body = serde_json::to_vec(&self).expect("envelopes serialize");
        let mut resp = (status, [(header::CONTENT_TYPE, "application/json")], body).into_response();
        if let Some(rev) = self.revision {
            resp.headers_mut().insert(REVISION_HEADER, HeaderValue::from(rev));
        }
        resp
    }
}

pub fn ok<T: Serialize>(status: StatusCode, data: T, revision: Option<u64>) -> Response {
    ApiEnvelope::data(data, revision).into_response_with(status)
}

pub fn error(status: StatusCode, code: &str, message: impl Into<String>) -> Response {
    ApiEnvelope::<()> {
        ok: false,
        data: None,
        error: Some(ApiError {
            code: code.to_owned(),
            message: message.into(),
        }),
        revision: None,
    }
    .into_response_with(status)
}
