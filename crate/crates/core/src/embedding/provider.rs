use serde_json::json;

use super::{EmbeddingError, EmbeddingVector};
use crate::http::{post_json, HttpConfig, HttpFailure};
use crate::text::{fnv1a64, word_tokens};

pub const DEFAULT_MOCK_DIM: usize = 256;

pub trait EmbeddingProvider: Send + Sync {
    /// Identifier recorded in indexes; queries must come from the same provider.
    fn provider_id(&self) -> String;

    fn dim(&self) -> usize;

    /// Raw (not necessarily normalized) embedding of `text`.
    fn embed_raw(&self, text: &str) -> Result<Vec<f32>, EmbeddingError>;
}

/// Embeds `text` and returns a unit-normalized vector of the provider's dimension.
pub fn embed(
    provider: &dyn EmbeddingProvider,
    text: &str,
) -> Result<EmbeddingVector, EmbeddingError> {
    if text.trim().is_empty() {
        return Err(EmbeddingError::EmptyText);
    }
    let raw = provider.embed_raw(text)?;
    if raw.len() != provider.dim() {
        return Err(EmbeddingError::DimensionMismatch {
            expected: provider.dim(),
            actual: raw.len(),
        });
    }
    EmbeddingVector::normalized(raw)
}

/// Offline hashed bag-of-words embedder.
///
/// Every word token is hashed (FNV-1a) into one of `dim` buckets and counted;
/// texts sharing words therefore land close in cosine space.
#[derive(Debug, Clone)]
pub struct MockEmbedder {
    dim: usize,
}

impl MockEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self { dim }
    }
}

impl Default for MockEmbedder {
    fn default() -> Self {
        Self::new(DEFAULT_MOCK_DIM)
    }
}

impl EmbeddingProvider for MockEmbedder {
    fn provider_id(&self) -> String {
        format!("mock-hash-v1:{}", self.dim)
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_raw(&self, text: &str) -> Result<Vec<f32>, EmbeddingError> {
        let mut buckets = vec![0f32; self.dim];
        let mut any = false;
        for tok in word_tokens(text) {
            buckets[(fnv1a64(tok.as_bytes()) % self.dim as u64) as usize] += 1.0;
            any = true;
        }
        if !any {
            return Err(EmbeddingError::EmptyText);
        }
        Ok(buckets)
    }
}

/// Client for an embeddings endpoint following the common
/// `POST /embeddings {model, input}` → `{data: [{embedding: [...]}]}` shape.
#[derive(Debug, Clone)]
pub struct HttpEmbedder {
    pub http: HttpConfig,
    pub model: String,
    pub dim: usize,
}

impl HttpEmbedder {
    pub fn new(http: HttpConfig, model: impl Into<String>, dim: usize) -> Self {
        Self {
            http,
            model: model.into(),
            dim,
        }
    }
}

impl EmbeddingProvider for HttpEmbedder {
    fn provider_id(&self) -> String {
        format!("http:{}:{}", self.model, self.dim)
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_raw(&self, text: &str) -> Result<Vec<f32>, EmbeddingError> {
        let body = json!({ "model": self.model, "input": text });
        let resp = post_json(&self.http, "embeddings", &body).map_err(|f| match f {
            HttpFailure::Unavailable { attempts, message } => {
                EmbeddingError::ProviderUnavailable { attempts, message }
            }
            HttpFailure::Rejected(m) => EmbeddingError::ProviderRejected(m),
        })?;
        let values = resp
            .pointer("/data/0/embedding")
            .and_then(|v| v.as_array())
            .ok_or_else(|| {
                EmbeddingError::ProviderRejected("response has no data[0].embedding".into())
            })?;
        values
            .iter()
            .map(|v| {
                v.as_f64().map(|x| x as f32).ok_or_else(|| {
                    EmbeddingError::ProviderRejected("non-numeric embedding value".into())
                })
            })
            .collect()
    }
}
