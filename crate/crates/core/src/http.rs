//! Blocking JSON-over-HTTP helper shared by the chat and embedding clients.

use std::time::Duration;

use serde_json::Value;

#[derive(Debug, Clone)]
pub struct HttpConfig {
    pub base_url: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
    /// Total attempts per request, including the first.
    pub max_attempts: u32,
    pub backoff: Duration,
}

impl HttpConfig {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            api_key: None,
            timeout: Duration::from_secs(120),
            max_attempts: 3,
            backoff: Duration::from_millis(500),
        }
    }

    /// Reads the base URL and key from the given environment variables.
    pub fn from_env(url_var: &str, key_var: &str) -> Option<Self> {
        let base = std::env::var(url_var).ok().filter(|s| !s.is_empty())?;
        let mut cfg = Self::new(base);
        cfg.api_key = std::env::var(key_var).ok().filter(|s| !s.is_empty());
        Some(cfg)
    }

    fn url(&self, path: &str) -> String {
        format!(
            "{}/{}",
            self.base_url.trim_end_matches('/'),
            path.trim_start_matches('/')
        )
    }
}

#[derive(Debug)]
pub(crate) enum HttpFailure {
    /// Exhausted retries on connection errors, 429 or 5xx.
    Unavailable { attempts: u32, message: String },
    /// Non-retryable status or undecodable body.
    Rejected(String),
}

pub(crate) fn post_json(cfg: &HttpConfig, path: &str, body: &Value) -> Result<Value, HttpFailure> {
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .timeout_global(Some(cfg.timeout))
        .http_status_as_error(false)
        .build()
        .into();
    let url = cfg.url(path);
    let attempts = cfg.max_attempts.max(1);
    let mut last = String::new();

    for attempt in 1..=attempts {
        if attempt > 1 {
            std::thread::sleep(cfg.backoff * (1 << (attempt - 2).min(6)));
        }
        let mut req = agent.post(&url).header("Content-Type", "application/json");
        if let Some(key) = &cfg.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        match req.send_json(body) {
            Ok(mut resp) => {
                let status = resp.status().as_u16();
                if status == 429 || status >= 500 {
                    last = format!("HTTP {status} from {url}");
                    continue;
                }
                if status >= 400 {
                    let text = resp.body_mut().read_to_string().unwrap_or_default();
                    return Err(HttpFailure::Rejected(format!(
                        "HTTP {status} from {url}: {text}"
                    )));
                }
                return resp.body_mut().read_json::<Value>().map_err(|e| {
                    HttpFailure::Rejected(format!("invalid JSON body from {url}: {e}"))
                });
            }
            Err(e) => last = format!("{url}: {e}"),
        }
    }
    Err(HttpFailure::Unavailable {
        attempts,
        message: last,
    })
}
