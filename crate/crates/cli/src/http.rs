//! Blocking JSON-over-HTTP client used for the LLM and embedding endpoints.

use std::thread;
use std::time::Duration;

use log::warn;
use serde_json::Value;
use ureq::Agent;

use intent_core::transport::JsonTransport;
use intent_core::{Error, Result};

/// Retries failed calls with exponential backoff: the k-th retry waits
/// `backoff * 2^(k-1)`.
pub struct HttpTransport {
    agent: Agent,
    max_retries: u32,
    backoff: Duration,
}

impl HttpTransport {
    pub fn new(timeout: Duration, max_retries: u32) -> Self {
        let agent: Agent = Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        HttpTransport {
            agent,
            max_retries,
            backoff: Duration::from_millis(250),
        }
    }

    pub fn with_backoff(mut self, backoff: Duration) -> Self {
        self.backoff = backoff;
        self
    }

    fn attempt(&self, url: &str, body: &Value, bearer: Option<&str>) -> Result<Value, String> {
        let mut request = self.agent.post(url);
        if let Some(token) = bearer {
            request = request.header("Authorization", &format!("Bearer {token}"));
        }
        let mut response = request.send_json(body).map_err(|e| e.to_string())?;
        let status = response.status();
        if !status.is_success() {
            return Err(format!("HTTP {status}"));
        }
        response
            .body_mut()
            .read_json::<Value>()
            .map_err(|e| format!("malformed response body: {e}"))
    }
}

impl JsonTransport for HttpTransport {
    fn post_json(&self, url: &str, body: &Value, bearer: Option<&str>) -> Result<Value> {
        let mut last = String::new();
        for attempt in 0..=self.max_retries {
            if attempt > 0 {
                let delay = self.backoff * 2u32.saturating_pow(attempt - 1);
                warn!(
                    "{url}: {last}; retry {attempt}/{} in {delay:?}",
                    self.max_retries
                );
                thread::sleep(delay);
            }
            match self.attempt(url, body, bearer) {
                Ok(v) => return Ok(v),
                Err(e) => last = e,
            }
        }
        Err(Error::Remote(format!(
            "{url}: {last} (after {} attempts)",
            self.max_retries + 1
        )))
    }
}

/// Reads the bearer token from the named environment variable.
pub fn bearer_from_env(var: Option<&str>) -> Result<Option<String>> {
    match var {
        None => Ok(None),
        Some(name) => std::env::var(name).map(Some).map_err(|_| {
            Error::InvalidConfig(format!("environment variable {name} is not set"))
        }),
    }
}
