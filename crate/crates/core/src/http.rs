//! JSON-over-HTTP with bounded retries, shared by the LLM and embedding backends.

use std::thread;
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;
use ureq::Agent;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub initial_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            initial_backoff: Duration::from_millis(500),
        }
    }
}

impl RetryPolicy {
    /// Runs `op` until it succeeds, fails permanently, or the retry budget is
    /// spent. Backoff doubles after each transient failure.
    pub fn run<T>(&self, mut op: impl FnMut() -> Result<T>) -> Result<T> {
        let mut backoff = self.initial_backoff;
        let mut attempt = 0;
        loop {
            match op() {
                Err(e) if e.is_retryable() && attempt < self.max_retries => {
                    attempt += 1;
                    thread::sleep(backoff);
                    backoff = backoff.saturating_mul(2);
                }
                Err(Error::Backend { message, retryable }) if retryable => {
                    return Err(Error::backend(
                        format!("{message} (gave up after {} attempts)", attempt + 1),
                        false,
                    ));
                }
                other => return other,
            }
        }
    }
}

pub(crate) fn agent(timeout: Duration) -> Agent {
    Agent::config_builder()
        .timeout_global(Some(timeout))
        .http_status_as_error(false)
        .build()
        .into()
}

/// Reads a bearer token from the named environment variable, if one is configured.
pub(crate) fn token_from_env(var: Option<&str>) -> Result<Option<String>> {
    match var {
        None => Ok(None),
        Some(name) => std::env::var(name)
            .map(Some)
            .map_err(|_| Error::Argument(format!("environment variable {name} is not set"))),
    }
}

pub(crate) fn post_json<B: Serialize, T: DeserializeOwned>(
    agent: &Agent,
    endpoint: &str,
    token: Option<&str>,
    body: &B,
) -> Result<T> {
    let mut req = agent.post(endpoint).header("Content-Type", "application/json");
    if let Some(t) = token {
        req = req.header("Authorization", format!("Bearer {t}"));
    }
    let mut resp = req
        .send_json(body)
        .map_err(|e| Error::backend(e.to_string(), true))?;
    let status = resp.status().as_u16();
    if status == 429 || status >= 500 {
        return Err(Error::backend(format!("HTTP {status} from {endpoint}"), true));
    }
    if !(200..300).contains(&status) {
        return Err(Error::backend(format!("HTTP {status} from {endpoint}"), false));
    }
    resp.body_mut()
        .read_json::<T>()
        .map_err(|e| Error::backend(format!("malformed response body: {e}"), false))
}
