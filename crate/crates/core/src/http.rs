//! Blocking JSON-over-HTTP client with bounded retries, shared by the
//! remote embedding provider and the remote rewriter.

use std::thread;
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::{Error, Result};

const BODY_SNIPPET: usize = 200;

#[derive(Debug, Clone)]
pub(crate) struct RetryPolicy {
    pub max_retries: usize,
    pub initial_backoff: Duration,
}

impl RetryPolicy {
    /// Sleep before retry number `attempt` (1-based): base * 2^(attempt-1).
    pub fn backoff(&self, attempt: usize) -> Duration {
        self.initial_backoff * (1u32 << (attempt - 1).min(16))
    }

    /// Total sleep time if every retry is used.
    #[cfg(test)]
    pub fn total_backoff(&self) -> Duration {
        (1..=self.max_retries).map(|a| self.backoff(a)).sum()
    }
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 3,
            initial_backoff: Duration::from_millis(100),
        }
    }
}

#[derive(Clone)]
pub(crate) struct JsonClient {
    agent: ureq::Agent,
    retry: RetryPolicy,
}

impl JsonClient {
    pub fn new(timeout: Duration, retry: RetryPolicy) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        JsonClient { agent, retry }
    }

    /// POSTs `body` and decodes a 200 response. Transport errors and 5xx
    /// responses are retried with exponential backoff; 4xx fail at once.
    pub fn post<B: Serialize, T: DeserializeOwned>(&self, url: &str, body: &B) -> Result<T> {
        let mut attempt = 0;
        loop {
            let outcome = self.post_once(url, body, attempt + 1);
            match outcome {
                Ok(text) => {
                    return serde_json::from_str(&text).map_err(|e| Error::Transport {
                        attempts: attempt + 1,
                        message: format!("undecodable response: {e}"),
                    })
                }
                Err(err) if err.is_retryable() && attempt < self.retry.max_retries => {
                    attempt += 1;
                    thread::sleep(self.retry.backoff(attempt));
                }
                Err(err) => return Err(err),
            }
        }
    }

    fn post_once<B: Serialize>(&self, url: &str, body: &B, attempts: usize) -> Result<String> {
        let transport = |e: ureq::Error| Error::Transport {
            attempts,
            message: e.to_string(),
        };
        let mut resp = self.agent.post(url).send_json(body).map_err(transport)?;
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().map_err(transport)?;
        if status != 200 {
            let body: String = text.chars().take(BODY_SNIPPET).collect();
            return Err(Error::Http { status, body });
        }
        Ok(text)
    }
}

/// Joins a base endpoint and a route without doubling slashes.
pub(crate) fn join_url(endpoint: &str, route: &str) -> String {
    format!("{}/{}", endpoint.trim_end_matches('/'), route.trim_start_matches('/'))
}
