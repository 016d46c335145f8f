use serde_json::{json, Value};

use super::{ChatProvider, ChatRequest, GatewayError, Message};
use crate::http::{post_json, HttpConfig, HttpFailure};

pub const LLM_URL_ENV: &str = "MCF_LLM_BASE_URL";
pub const LLM_KEY_ENV: &str = "MCF_LLM_API_KEY";

/// Client for a `POST /chat/completions` endpoint.
#[derive(Debug, Clone)]
pub struct HttpChatProvider {
    pub http: HttpConfig,
    pub model: String,
}

impl HttpChatProvider {
    pub fn new(http: HttpConfig, model: impl Into<String>) -> Self {
        Self {
            http,
            model: model.into(),
        }
    }

    pub fn from_env(model: impl Into<String>) -> Option<Self> {
        HttpConfig::from_env(LLM_URL_ENV, LLM_KEY_ENV).map(|http| Self::new(http, model))
    }
}

impl ChatProvider for HttpChatProvider {
    fn provider_id(&self) -> String {
        format!("http:{}", self.model)
    }

    fn complete(&self, req: &ChatRequest, messages: &[Message]) -> Result<String, GatewayError> {
        let mut body = json!({
            "model": self.model,
            "messages": messages,
            "temperature": req.temperature,
            "max_tokens": req.max_output_tokens,
        });
        if let Some(seed) = req.seed {
            body["seed"] = Value::from(seed);
        }
        let resp = post_json(&self.http, "chat/completions", &body).map_err(|f| match f {
            HttpFailure::Unavailable { attempts, message } => {
                GatewayError::ProviderUnavailable { attempts, message }
            }
            HttpFailure::Rejected(m) => GatewayError::ProviderRejected(m),
        })?;
        resp.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| {
                GatewayError::ProviderRejected("response has no choices[0].message.content".into())
            })
    }
}
