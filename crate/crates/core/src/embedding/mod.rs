//! Text embeddings and exact cosine retrieval over code catalogs.

mod index;
mod provider;

pub use index::{
    build_index, fallback_expand, query_top_n, Candidate, CodeIndex, IndexItem, RetrievalResult,
};
pub use provider::{embed, EmbeddingProvider, HttpEmbedder, MockEmbedder, DEFAULT_MOCK_DIM};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("embedding provider unavailable after {attempts} attempt(s): {message}")]
    ProviderUnavailable { attempts: u32, message: String },
    #[error("embedding provider rejected the request: {0}")]
    ProviderRejected(String),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("cannot embed empty text")]
    EmptyText,
    #[error("embedding contains non-finite or all-zero values")]
    Degenerate,
    #[error("catalog is empty")]
    EmptyCatalog,
    #[error("embedding failed for code {code}: {source}")]
    Item {
        code: String,
        #[source]
        source: Box<EmbeddingError>,
    },
    #[error("index was built with provider {index}, query provider is {query}")]
    ProviderMismatch { index: String, query: String },
    #[error("corrupt index file: {0}")]
    CorruptIndex(String),
    #[error("progress file belongs to a different build: {0}")]
    ProgressMismatch(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Unit-normalized embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    values: Vec<f32>,
}

impl EmbeddingVector {
    /// L2-normalizes `raw`. Fails on empty, non-finite or zero input.
    pub fn normalized(raw: Vec<f32>) -> Result<Self, EmbeddingError> {
        if raw.is_empty() || raw.iter().any(|v| !v.is_finite()) {
            return Err(EmbeddingError::Degenerate);
        }
        let norm = raw
            .iter()
            .map(|&v| f64::from(v) * f64::from(v))
            .sum::<f64>()
            .sqrt();
        if norm == 0.0 {
            return Err(EmbeddingError::Degenerate);
        }
        Ok(Self {
            values: raw
                .into_iter()
                .map(|v| (f64::from(v) / norm) as f32)
                .collect(),
        })
    }

    /// Wraps stored values that are already unit length.
    pub(crate) fn from_stored(values: Vec<f32>) -> Self {
        Self { values }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.values
    }

    pub fn norm(&self) -> f64 {
        self.values
            .iter()
            .map(|&v| f64::from(v) * f64::from(v))
            .sum::<f64>()
            .sqrt()
    }
}

/// Cosine similarity, `dot(a, b) / (|a| |b|)`, accumulated in f64.
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, EmbeddingError> {
    if a.dim() != b.dim() {
        return Err(EmbeddingError::DimensionMismatch {
            expected: a.dim(),
            actual: b.dim(),
        });
    }
    let mut dot = 0.0f64;
    let mut na = 0.0f64;
    let mut nb = 0.0f64;
    for (&x, &y) in a.values.iter().zip(&b.values) {
        let (x, y) = (f64::from(x), f64::from(y));
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(xs: &[f32]) -> EmbeddingVector {
        EmbeddingVector::normalized(xs.to_vec()).unwrap()
    }

    #[test]
    fn cosine_identities() {
        let a = v(&[0.3, -1.2, 2.0]);
        assert!((cosine(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let neg = v(&[-0.3, 1.2, -2.0]);
        assert!((cosine(&a, &neg).unwrap() + 1.0).abs() < 1e-12);
        let e1 = v(&[1.0, 0.0, 0.0]);
        let e2 = v(&[0.0, 1.0, 0.0]);
        assert_eq!(cosine(&e1, &e2).unwrap(), 0.0);
    }

    #[test]
    fn cosine_dimension_mismatch() {
        assert!(matches!(
            cosine(&v(&[1.0, 0.0]), &v(&[1.0, 0.0, 0.0])),
            Err(EmbeddingError::DimensionMismatch {
                expected: 2,
                actual: 3
            })
        ));
    }

    #[test]
    fn normalization_rejects_degenerate() {
        assert!(EmbeddingVector::normalized(vec![0.0, 0.0]).is_err());
        assert!(EmbeddingVector::normalized(vec![f32::NAN]).is_err());
        assert!((v(&[3.0, 4.0]).norm() - 1.0).abs() < 1e-6);
    }
}
