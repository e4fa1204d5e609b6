//! Blocking JSON-over-HTTP calls with retries and exponential backoff.

use std::thread;
use std::time::Duration;

use serde_json::Value;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct HttpEndpoint {
    pub url: String,
    /// Sent as `Authorization: Bearer <token>` when present.
    pub token: Option<String>,
    pub timeout: Duration,
    /// Additional attempts after the first failure.
    pub retries: u32,
    /// Delay before the first retry; doubles on each further retry.
    pub backoff: Duration,
}

impl HttpEndpoint {
    pub fn new(url: impl Into<String>) -> Self {
        HttpEndpoint {
            url: url.into(),
            token: None,
            timeout: Duration::from_secs(60),
            retries: 3,
            backoff: Duration::from_millis(500),
        }
    }

    pub(crate) fn post_json(&self, body: &Value) -> Result<Value> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(self.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let mut last_error = String::new();
        for attempt in 0..=self.retries {
            if attempt > 0 {
                thread::sleep(self.backoff * 2u32.saturating_pow(attempt - 1));
            }
            let mut request = agent.post(&self.url);
            if let Some(token) = &self.token {
                request = request.header("Authorization", &format!("Bearer {token}"));
            }
            match request.send_json(body) {
                Ok(mut response) if response.status().is_success() => {
                    return response
                        .body_mut()
                        .read_json::<Value>()
                        .map_err(|e| Error::Provider(format!("invalid JSON response from {}: {e}", self.url)));
                }
                Ok(response) => last_error = format!("HTTP status {}", response.status()),
                Err(e) => last_error = e.to_string(),
            }
            log::warn!("request to {} failed (attempt {}): {last_error}", self.url, attempt + 1);
        }
        Err(Error::Provider(format!(
            "{} failed after {} attempts: {last_error}",
            self.url,
            self.retries + 1
        )))
    }
}
