//! Minimal JSON-over-HTTP seam for the remote LLM and embedding services.

use serde_json::Value;

use crate::error::Result;

/// Posts a JSON body and returns the decoded JSON response.
///
/// Implementations own retries and timeouts; failures surface as
/// [`crate::Error::Remote`].
pub trait JsonTransport: Send + Sync {
    fn post_json(&self, url: &str, body: &Value, bearer: Option<&str>) -> Result<Value>;
}

impl<T: JsonTransport + ?Sized> JsonTransport for &T {
    fn post_json(&self, url: &str, body: &Value, bearer: Option<&str>) -> Result<Value> {
        (**self).post_json(url, body, bearer)
    }
}
