//! Rewriters turn the extracted sentence sequence into summary text.

use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::http::{join_url, JsonClient, RetryPolicy};
use crate::{Error, Result};

pub const DEFAULT_PROMPT: &str = "re-write";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewriteRequest {
    pub sentences: Vec<String>,
    pub prompt_tag: String,
}

impl RewriteRequest {
    pub fn new(sentences: Vec<String>) -> Self {
        RewriteRequest {
            sentences,
            prompt_tag: DEFAULT_PROMPT.to_string(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sentences.is_empty() {
            return Err(Error::InvalidRequest("no sentences to rewrite".into()));
        }
        if self.sentences.iter().any(|s| s.trim().is_empty()) {
            return Err(Error::InvalidRequest("empty sentence in request".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RewriteSource {
    Identity,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewriteResult {
    pub text: String,
    pub source: RewriteSource,
    pub latency_ms: u64,
}

pub trait Rewriter: Send + Sync {
    fn rewrite(&self, req: &RewriteRequest) -> Result<RewriteResult>;
}

/// Joins the sentences with single spaces.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityRewriter;

impl Rewriter for IdentityRewriter {
    fn rewrite(&self, req: &RewriteRequest) -> Result<RewriteResult> {
        req.validate()?;
        Ok(RewriteResult {
            text: req.sentences.join(" "),
            source: RewriteSource::Identity,
            latency_ms: 0,
        })
    }
}

/// Counting semaphore bounding concurrent requests.
struct InflightLimit {
    max: usize,
    current: Mutex<usize>,
    freed: Condvar,
}

impl InflightLimit {
    fn new(max: usize) -> Self {
        InflightLimit {
            max: max.max(1),
            current: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> InflightGuard<'_> {
        let mut n = self.current.lock().unwrap_or_else(|e| e.into_inner());
        while *n >= self.max {
            n = self.freed.wait(n).unwrap_or_else(|e| e.into_inner());
        }
        *n += 1;
        InflightGuard(self)
    }
}

struct InflightGuard<'a>(&'a InflightLimit);

impl Drop for InflightGuard<'_> {
    fn drop(&mut self) {
        let mut n = self.0.current.lock().unwrap_or_else(|e| e.into_inner());
        *n -= 1;
        self.0.freed.notify_one();
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemoteRewriterConfig {
    pub endpoint: String,
    pub timeout_ms: u64,
    pub max_retries: usize,
    pub initial_backoff_ms: u64,
    pub max_inflight: usize,
}

impl Default for RemoteRewriterConfig {
    fn default() -> Self {
        RemoteRewriterConfig {
            endpoint: String::new(),
            timeout_ms: 60_000,
            max_retries: 3,
            initial_backoff_ms: 100,
            max_inflight: 4,
        }
    }
}

/// Client for a `POST /rewrite` service.
pub struct RemoteRewriter {
    url: String,
    client: JsonClient,
    limit: InflightLimit,
}

#[derive(Deserialize)]
struct RewriteResponse {
    text: String,
}

impl RemoteRewriter {
    pub fn new(cfg: &RemoteRewriterConfig) -> Result<Self> {
        if cfg.endpoint.is_empty() {
            return Err(Error::InvalidConfig("remote rewriter needs an endpoint".into()));
        }
        let retry = RetryPolicy {
            max_retries: cfg.max_retries,
            initial_backoff: Duration::from_millis(cfg.initial_backoff_ms),
        };
        Ok(RemoteRewriter {
            url: join_url(&cfg.endpoint, "rewrite"),
            client: JsonClient::new(Duration::from_millis(cfg.timeout_ms), retry),
            limit: InflightLimit::new(cfg.max_inflight),
        })
    }
}

impl Rewriter for RemoteRewriter {
    fn rewrite(&self, req: &RewriteRequest) -> Result<RewriteResult> {
        req.validate()?;
        let _slot = self.limit.acquire();
        let start = Instant::now();
        let body = json!({"prompt": req.prompt_tag, "sentences": req.sentences});
        let resp: RewriteResponse = self.client.post(&self.url, &body)?;
        if resp.text.trim().is_empty() {
            return Err(Error::EmptyRewrite);
        }
        Ok(RewriteResult {
            text: resp.text,
            source: RewriteSource::Remote,
            latency_ms: start.elapsed().as_millis() as u64,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum RewriterKind {
    #[default]
    Identity,
    Remote,
}

impl std::str::FromStr for RewriterKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(RewriterKind::Identity),
            "remote" => Ok(RewriterKind::Remote),
            other => Err(Error::InvalidConfig(format!("unknown rewriter {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct RewriterConfig {
    pub kind: RewriterKind,
    pub remote: RemoteRewriterConfig,
}

impl RewriterConfig {
    pub fn build(&self) -> Result<Box<dyn Rewriter>> {
        Ok(match self.kind {
            RewriterKind::Identity => Box::new(IdentityRewriter),
            RewriterKind::Remote => Box::new(RemoteRewriter::new(&self.remote)?),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::split_sentences;

    fn req(s: &[&str]) -> RewriteRequest {
        RewriteRequest::new(s.iter().map(|x| x.to_string()).collect())
    }

    #[test]
    fn identity_joins() {
        assert_eq!(IdentityRewriter.rewrite(&req(&["A.", "B."])).unwrap().text, "A. B.");
        assert_eq!(IdentityRewriter.rewrite(&req(&["X."])).unwrap().text, "X.");
        assert!(IdentityRewriter.rewrite(&req(&[])).is_err());
        assert!(IdentityRewriter.rewrite(&req(&["A.", " "])).is_err());
    }

    #[test]
    fn identity_is_idempotent() {
        let first = IdentityRewriter
            .rewrite(&req(&["Storms hit.", "Power failed."]))
            .unwrap()
            .text;
        let again = IdentityRewriter
            .rewrite(&RewriteRequest::new(split_sentences(&first)))
            .unwrap()
            .text;
        assert_eq!(first, again);
    }

    #[test]
    fn remote_requires_endpoint() {
        assert!(RemoteRewriter::new(&RemoteRewriterConfig::default()).is_err());
    }
}
