//! Bounded remote CSV fetch.

use std::time::Duration;

use axum::http::StatusCode;

use crate::error::ApiError;

/// Downloads `url` (http or https only), failing with 413 as soon as the body
/// is known to exceed `cap` bytes and with 502 on any transport or upstream
/// error, including the timeout.
pub async fn fetch_capped(url: &str, cap: u64, timeout: Duration) -> Result<Vec<u8>, ApiError> {
    let parsed = reqwest::Url::parse(url).map_err(|e| ApiError::bad_request(format!("invalid url `{url}`: {e}")))?;
    if !matches!(parsed.scheme(), "http" | "https") {
        return Err(ApiError::bad_request(format!("url scheme must be http or https, got `{}`", parsed.scheme())));
    }
    let too_large = || ApiError::new(StatusCode::PAYLOAD_TOO_LARGE, format!("remote file exceeds the {cap}-byte limit"));
    let bad_gateway = |e: reqwest::Error| ApiError::new(StatusCode::BAD_GATEWAY, format!("fetching {url} failed: {e}"));

    let client = reqwest::Client::builder().timeout(timeout).build().map_err(bad_gateway)?;
    let mut response = client.get(parsed).send().await.map_err(bad_gateway)?;
    if !response.status().is_success() {
        return Err(ApiError::new(
            StatusCode::BAD_GATEWAY,
            format!("fetching {url} failed: upstream answered {}", response.status()),
        ));
    }
    if response.content_length().is_some_and(|n| n > cap) {
        return Err(too_large());
    }
    let mut body = Vec::new();
    while let Some(chunk) = response.chunk().await.map_err(bad_gateway)? {
        if body.len() as u64 + chunk.len() as u64 > cap {
            return Err(too_large());
        }
        body.extend_from_slice(&chunk);
    }
    Ok(body)
}
