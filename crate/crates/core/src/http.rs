//! JSON-over-HTTP calls with bounded exponential-backoff retries.

use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy)]
pub struct RetryPolicy {
    /// Retries after the first attempt.
    pub max_retries: u32,
    pub base_delay: Duration,
    pub request_timeout: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            base_delay: Duration::from_millis(500),
            request_timeout: Duration::from_secs(300),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    /// Rejected by the service (4xx) or unusable response; not retried.
    Permanent,
    /// Transport error, timeout or 5xx that persisted through every retry.
    Transient,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CallError {
    pub kind: FailureKind,
    pub message: String,
    pub attempts: u32,
}

impl std::fmt::Display for CallError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:?} after {} attempt(s): {}", self.kind, self.attempts, self.message)
    }
}

pub fn build_client(policy: &RetryPolicy) -> reqwest::Client {
    reqwest::Client::builder()
        .timeout(policy.request_timeout)
        .build()
        .expect("http client configuration is static")
}

/// POSTs a pre-serialized JSON body and decodes the JSON response.
/// Returns the decoded body and the number of attempts made.
pub async fn post_json<R: DeserializeOwned>(
    client: &reqwest::Client,
    url: &str,
    body: &[u8],
    policy: &RetryPolicy,
) -> Result<(R, u32), CallError> {
    let mut attempts = 0;
    loop {
        attempts += 1;
        let outcome = client
            .post(url)
            .header(reqwest::header::CONTENT_TYPE, "application/json")
            .body(body.to_vec())
            .send()
            .await;
        let transient = match outcome {
            Ok(resp) if resp.status().is_success() => {
                return match resp.bytes().await {
                    Ok(bytes) => serde_json::from_slice(&bytes)
                        .map(|r| (r, attempts))
                        .map_err(|e| CallError {
                            kind: FailureKind::Permanent,
                            message: format!("malformed response body: {e}"),
                            attempts,
                        }),
                    Err(e) => Err(CallError {
                        kind: FailureKind::Transient,
                        message: format!("reading response body: {e}"),
                        attempts,
                    }),
                };
            }
            Ok(resp) if resp.status().is_client_error() => {
                let status = resp.status();
                let text = resp.text().await.unwrap_or_default();
                return Err(CallError {
                    kind: FailureKind::Permanent,
                    message: format!("service returned {status}: {text}"),
                    attempts,
                });
            }
            Ok(resp) => format!("service returned {}", resp.status()),
            Err(e) => format!("transport error: {e}"),
        };
        if attempts > policy.max_retries {
            return Err(CallError {
                kind: FailureKind::Transient,
                message: transient,
                attempts,
            });
        }
        let delay = policy.base_delay * 2u32.saturating_pow(attempts - 1);
        tracing::debug!("{url}: {transient}; retrying in {delay:?}");
        tokio::time::sleep(delay).await;
    }
}
