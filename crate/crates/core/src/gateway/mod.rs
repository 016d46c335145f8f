//! Chat-completion gateway with schema-validated output.

mod chat_http;
mod mock;
mod schema;

pub use chat_http::HttpChatProvider;
pub use mock::{MockProvider, ScriptEntry};
pub use schema::{
    validate_schema, CodeSelection, CptAssignmentRecord, DescriptionList, Evidence,
    IcdAssignmentRecord, MetaRecord, NoteText, Payload, SchemaId, SchemaViolation,
};

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::hashing::sha256_hex;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub system_prompt: String,
    pub user_prompt: String,
    pub schema_id: SchemaId,
    pub temperature: f64,
    pub seed: Option<u64>,
    pub max_output_tokens: u32,
}

impl ChatRequest {
    pub fn new(
        system_prompt: impl Into<String>,
        user_prompt: impl Into<String>,
        schema_id: SchemaId,
    ) -> Self {
        Self {
            system_prompt: system_prompt.into(),
            user_prompt: user_prompt.into(),
            schema_id,
            temperature: 0.0,
            seed: None,
            max_output_tokens: 2048,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    fn hash(&self) -> String {
        sha256_hex(serde_json::to_vec(self).expect("request serializes"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn new(role: Role, content: impl Into<String>) -> Self {
        Self {
            role,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedOutput {
    pub schema_id: SchemaId,
    pub payload: Payload,
    pub raw_text: String,
    pub attempt_count: u32,
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("schema violation after {attempts} attempt(s) at {}", violation)]
    SchemaViolation {
        violation: SchemaViolation,
        raw_text: String,
        attempts: u32,
    },
    #[error("chat provider unavailable after {attempts} attempt(s): {message}")]
    ProviderUnavailable { attempts: u32, message: String },
    #[error("chat provider rejected the request: {0}")]
    ProviderRejected(String),
    #[error("token budget exceeded: {used} used + {requested} requested > {budget}")]
    BudgetExceeded {
        used: u64,
        requested: u64,
        budget: u64,
    },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("audit log: {0}")]
    Audit(#[from] std::io::Error),
}

pub trait ChatProvider: Send + Sync {
    fn provider_id(&self) -> String;

    /// One completion for the conversation so far. `messages` starts with the
    /// system and user prompts of `req` and grows on retries.
    fn complete(&self, req: &ChatRequest, messages: &[Message]) -> Result<String, GatewayError>;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub provider_id: String,
    pub schema_id: SchemaId,
    pub attempt: u32,
    pub request_hash: String,
    pub response_hash: Option<String>,
    pub outcome: String,
}

#[derive(Debug, Clone)]
pub struct GatewayConfig {
    pub max_retries: u32,
    /// Total prompt + completion tokens allowed across all calls.
    pub token_budget: Option<u64>,
    /// Minimum spacing between provider calls.
    pub min_interval: Duration,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            max_retries: 2,
            token_budget: None,
            min_interval: Duration::ZERO,
        }
    }
}

pub struct Gateway {
    provider: Arc<dyn ChatProvider>,
    config: GatewayConfig,
    audit: Mutex<AuditSink>,
    tokens_used: AtomicU64,
    last_call: Mutex<Option<Instant>>,
}

#[derive(Default)]
struct AuditSink {
    entries: Vec<AuditEntry>,
    file: Option<BufWriter<File>>,
}

/// Whitespace-token approximation used for budget accounting.
pub fn approx_tokens(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}

impl Gateway {
    pub fn new(provider: Arc<dyn ChatProvider>, config: GatewayConfig) -> Self {
        Self {
            provider,
            config,
            audit: Mutex::new(AuditSink::default()),
            tokens_used: AtomicU64::new(0),
            last_call: Mutex::new(None),
        }
    }

    /// Additionally appends every audit record to a JSONL file.
    pub fn with_audit_file(self, path: &Path) -> std::io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        self.audit.lock().unwrap().file = Some(BufWriter::new(file));
        Ok(self)
    }

    pub fn provider_id(&self) -> String {
        self.provider.provider_id()
    }

    pub fn tokens_used(&self) -> u64 {
        self.tokens_used.load(Ordering::SeqCst)
    }

    pub fn audit_log(&self) -> Vec<AuditEntry> {
        self.audit.lock().unwrap().entries.clone()
    }

    /// Removes and returns the in-memory audit entries.
    pub fn drain_audit(&self) -> Vec<AuditEntry> {
        std::mem::take(&mut self.audit.lock().unwrap().entries)
    }

    pub fn chat(&self, req: &ChatRequest) -> Result<ValidatedOutput, GatewayError> {
        if req.system_prompt.trim().is_empty() || req.user_prompt.trim().is_empty() {
            return Err(GatewayError::InvalidRequest(
                "prompts must be non-empty".into(),
            ));
        }
        if !(req.temperature >= 0.0) {
            return Err(GatewayError::InvalidRequest(
                "temperature must be >= 0".into(),
            ));
        }
        let provider_id = self.provider.provider_id();
        let mut messages = vec![
            Message::new(Role::System, req.system_prompt.clone()),
            Message::new(Role::User, req.user_prompt.clone()),
        ];
        let max_attempts = self.config.max_retries + 1;
        let mut last = None;
        for attempt in 1..=max_attempts {
            let request_hash = sha256_hex(
                serde_json::to_vec(&(req.hash(), &messages)).expect("messages serialize"),
            );
            let prompt_tokens: u64 = messages.iter().map(|m| approx_tokens(&m.content)).sum();
            self.reserve(prompt_tokens + u64::from(req.max_output_tokens))?;
            self.pace();
            let raw = match self.provider.complete(req, &messages) {
                Ok(raw) => raw,
                Err(e) => {
                    self.record(AuditEntry {
                        provider_id: provider_id.clone(),
                        schema_id: req.schema_id,
                        attempt,
                        request_hash,
                        response_hash: None,
                        outcome: format!("provider_error: {e}"),
                    })?;
                    return Err(e);
                }
            };
            self.tokens_used
                .fetch_add(prompt_tokens + approx_tokens(&raw), Ordering::SeqCst);
            let response_hash = Some(sha256_hex(&raw));
            match validate_schema(req.schema_id, &raw) {
                Ok(payload) => {
                    self.record(AuditEntry {
                        provider_id,
                        schema_id: req.schema_id,
                        attempt,
                        request_hash,
                        response_hash,
                        outcome: "ok".into(),
                    })?;
                    return Ok(ValidatedOutput {
                        schema_id: req.schema_id,
                        payload,
                        raw_text: raw,
                        attempt_count: attempt,
                    });
                }
                Err(violation) => {
                    self.record(AuditEntry {
                        provider_id: provider_id.clone(),
                        schema_id: req.schema_id,
                        attempt,
                        request_hash,
                        response_hash,
                        outcome: format!("schema_violation: {violation}"),
                    })?;
                    messages.push(Message::new(Role::Assistant, raw.clone()));
                    messages.push(Message::new(
                        Role::User,
                        repair_prompt(req.schema_id, &violation),
                    ));
                    last = Some((violation, raw));
                }
            }
        }
        let (violation, raw_text) = last.expect("at least one attempt");
        Err(GatewayError::SchemaViolation {
            violation,
            raw_text,
            attempts: max_attempts,
        })
    }

    fn reserve(&self, requested: u64) -> Result<(), GatewayError> {
        if let Some(budget) = self.config.token_budget {
            let used = self.tokens_used();
            if used + requested > budget {
                return Err(GatewayError::BudgetExceeded {
                    used,
                    requested,
                    budget,
                });
            }
        }
        Ok(())
    }

    fn pace(&self) {
        if self.config.min_interval.is_zero() {
            return;
        }
        let mut last = self.last_call.lock().unwrap();
        if let Some(prev) = *last {
            let elapsed = prev.elapsed();
            if elapsed < self.config.min_interval {
                std::thread::sleep(self.config.min_interval - elapsed);
            }
        }
        *last = Some(Instant::now());
    }

    fn record(&self, entry: AuditEntry) -> Result<(), GatewayError> {
        let mut sink = self.audit.lock().unwrap();
        if let Some(f) = sink.file.as_mut() {
            serde_json::to_writer(&mut *f, &entry).map_err(std::io::Error::other)?;
            f.write_all(b"\n")?;
            f.flush()?;
        }
        sink.entries.push(entry);
        Ok(())
    }
}

fn repair_prompt(schema: SchemaId, violation: &SchemaViolation) -> String {
    format!(
        "The previous reply did not satisfy the {schema} output format ({violation}). \
         Reply again with only the corrected JSON."
    )
}

const CONTEXT_OPEN: &str = "<context>";
const CONTEXT_CLOSE: &str = "</context>";

/// Wraps structured request context so offline providers can read it back.
pub fn context_block(value: &Value) -> String {
    format!("{CONTEXT_OPEN}{value}{CONTEXT_CLOSE}")
}

pub fn extract_context(prompt: &str) -> Option<Value> {
    let start = prompt.find(CONTEXT_OPEN)? + CONTEXT_OPEN.len();
    let end = start + prompt[start..].find(CONTEXT_CLOSE)?;
    serde_json::from_str(&prompt[start..end]).ok()
}

/// Marker placed in system prompts to name the prompt template.
pub fn tag_marker(tag: &str) -> String {
    format!("[tag:{tag}]")
}

pub fn extract_tag(system_prompt: &str) -> Option<&str> {
    let start = system_prompt.find("[tag:")? + 5;
    let end = start + system_prompt[start..].find(']')?;
    Some(&system_prompt[start..end])
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Canned(Vec<&'static str>, Mutex<usize>);

    impl ChatProvider for Canned {
        fn provider_id(&self) -> String {
            "canned".into()
        }
        fn complete(
            &self,
            _req: &ChatRequest,
            messages: &[Message],
        ) -> Result<String, GatewayError> {
            let mut n = self.1.lock().unwrap();
            let out = self.0[(*n).min(self.0.len() - 1)];
            *n += 1;
            if *n > 1 {
                assert!(messages.last().unwrap().content.contains("rationale"));
            }
            Ok(out.to_string())
        }
    }

    fn req() -> ChatRequest {
        ChatRequest::new(
            "You are a coder.",
            "Code this note.",
            SchemaId::IcdAssignments,
        )
    }

    const BAD: &str = r#"[{"code":"E11.9","evidence":{"line_index":[2]}}]"#;
    const GOOD: &str = r#"[{"code":"E11.9","rationale":"dm","evidence":{"line_index":[2]}}]"#;

    #[test]
    fn retry_repairs_then_succeeds() {
        let gw = Gateway::new(
            Arc::new(Canned(vec![BAD, GOOD], Mutex::new(0))),
            GatewayConfig::default(),
        );
        let out = gw.chat(&req()).unwrap();
        assert_eq!(out.attempt_count, 2);
        let log = gw.audit_log();
        assert_eq!(log.len(), 2);
        assert!(log[0].outcome.starts_with("schema_violation"));
        assert_eq!(log[1].outcome, "ok");
    }

    #[test]
    fn retries_exhausted_preserves_raw_text() {
        let gw = Gateway::new(
            Arc::new(Canned(vec![BAD], Mutex::new(0))),
            GatewayConfig::default(),
        );
        match gw.chat(&req()) {
            Err(GatewayError::SchemaViolation {
                raw_text, attempts, ..
            }) => {
                assert_eq!(raw_text, BAD);
                assert_eq!(attempts, 3);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(gw.audit_log().len(), 3);
    }

    #[test]
    fn budget_is_enforced() {
        let cfg = GatewayConfig {
            token_budget: Some(100),
            ..Default::default()
        };
        let gw = Gateway::new(Arc::new(Canned(vec![GOOD], Mutex::new(0))), cfg);
        assert!(matches!(
            gw.chat(&req()),
            Err(GatewayError::BudgetExceeded { .. })
        ));
        assert!(gw.audit_log().is_empty());
    }

    #[test]
    fn empty_prompt_rejected() {
        let gw = Gateway::new(
            Arc::new(Canned(vec![GOOD], Mutex::new(0))),
            GatewayConfig::default(),
        );
        let r = ChatRequest::new(" ", "x", SchemaId::IcdAssignments);
        assert!(matches!(gw.chat(&r), Err(GatewayError::InvalidRequest(_))));
    }

    #[test]
    fn audit_file_has_no_prompt_text() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("audit.jsonl");
        let gw = Gateway::new(
            Arc::new(Canned(vec![GOOD], Mutex::new(0))),
            GatewayConfig::default(),
        )
        .with_audit_file(&path)
        .unwrap();
        gw.chat(&req()).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 1);
        assert!(!text.contains("Code this note"));
    }

    #[test]
    fn context_and_tag_round_trip() {
        let v = serde_json::json!({"codes": ["I10"], "n": 2});
        let prompt = format!("Pick codes.\n{}\nThanks", context_block(&v));
        assert_eq!(extract_context(&prompt), Some(v));
        assert_eq!(
            extract_tag(&format!("sys {}", tag_marker("icd_label"))),
            Some("icd_label")
        );
        assert_eq!(extract_tag("none"), None);
    }
}
