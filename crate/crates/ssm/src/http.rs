//! JSON-over-HTTP transport: each request kind is POSTed to its endpoint
//! (`/detect`, `/relations`, …) under a base URL. Any server speaking the
//! wire protocol can stand in for the model.

use std::time::Duration;

use serde_json::Value;
use ssm_core::backend::{BackendError, BackendRequest, Transport};

pub struct HttpTransport {
    base: String,
    agent: ureq::Agent,
}

impl HttpTransport {
    pub fn new(base_url: &str, timeout: Duration) -> Self {
        HttpTransport {
            base: base_url.trim_end_matches('/').to_string(),
            agent: ureq::AgentBuilder::new().timeout(timeout).build(),
        }
    }

    pub fn url(&self, request: &BackendRequest) -> String {
        format!("{}{}", self.base, request.kind.endpoint())
    }
}

fn is_timeout(e: &ureq::Transport) -> bool {
    let mut src: Option<&(dyn std::error::Error + 'static)> = std::error::Error::source(e);
    while let Some(s) = src {
        if let Some(io) = s.downcast_ref::<std::io::Error>() {
            return matches!(io.kind(), std::io::ErrorKind::TimedOut | std::io::ErrorKind::WouldBlock);
        }
        src = s.source();
    }
    false
}

impl Transport for HttpTransport {
    fn send(&mut self, request: &BackendRequest) -> Result<Value, BackendError> {
        let body = serde_json::to_value(request).map_err(|e| BackendError::Transport(e.to_string()))?;
        match self.agent.post(&self.url(request)).send_json(body) {
            Ok(resp) => {
                let text = resp.into_string().map_err(|e| BackendError::Transport(e.to_string()))?;
                serde_json::from_str(&text).map_err(|e| BackendError::schema("$", format!("response is not JSON: {e}")))
            }
            Err(ureq::Error::Status(code, resp)) => {
                let detail = resp.into_string().unwrap_or_default();
                if code >= 500 {
                    Err(BackendError::Transport(format!("HTTP {code}: {detail}")))
                } else {
                    Err(BackendError::Unavailable(format!("HTTP {code}: {detail}")))
                }
            }
            Err(ureq::Error::Transport(t)) if is_timeout(&t) => Err(BackendError::Timeout),
            Err(ureq::Error::Transport(t)) => Err(BackendError::Transport(t.to_string())),
        }
    }
}
