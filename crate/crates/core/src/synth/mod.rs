//! Synthetic chart generation and evidence-linked labeling.

mod corpus;
mod cpt;
mod icd;
mod meta;
pub mod phi;
mod prompts;

pub use corpus::{
    generate_corpus, label_corpus, read_charts, read_gold, run_corpus, CorpusConfig, CorpusKind,
    Diagnostics, StepDiagnostics, AUDIT_FILE, CHARTS_FILE, DIAGNOSTICS_FILE, GATEWAY_AUDIT_FILE,
    GENERATED_FILE, GOLD_FILE, REVIEW_QUEUE_FILE,
};
pub use cpt::{generate_cpt_note, label_cpt_note, CptGenConfig, CptLabelConfig, CptLabelOutcome};
pub use icd::{
    generate_icd_chart, label_icd_chart, IcdGenConfig, IcdLabelConfig, IcdLabelOutcome, ReviewItem,
};
pub use meta::{builtin_metas, derive_meta, extract_sections, SecureContext, SECURE_MARKER};
pub use phi::{PhiFilter, PhiRule};

use std::collections::BTreeSet;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::EmbeddingError;
use crate::gateway::GatewayError;
use crate::hashing::sha256_hex;
use crate::taxonomy::{CodeSystem, Domain, TaxonomyError};

pub const PIPELINE_VERSION: &str = concat!("mcf-", env!("CARGO_PKG_VERSION"));

/// Timestamp written into provenance unless the caller supplies one; a fixed
/// value keeps reruns byte-identical.
pub const DEFAULT_CREATED_AT: &str = "1970-01-01T00:00:00Z";

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("{0} is not a secure ingestion directory (missing marker file)")]
    NotSecure(PathBuf),
    #[error("PHI filter rejected {what}: {rule}")]
    PhiFilterRejection { what: String, rule: &'static str },
    #[error("no catalog codes in pool {0}")]
    EmptyPool(String),
    #[error("generated note for {0} has no text")]
    EmptyNote(String),
    #[error("unknown specialty {0:?}")]
    UnknownSpecialty(String),
    #[error("index is for {found}, expected {expected}")]
    WrongSystem {
        expected: CodeSystem,
        found: CodeSystem,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Taxonomy(#[from] TaxonomyError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Json {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

impl SynthError {
    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> SynthError {
        let path = path.into();
        move |source| SynthError::Io { path, source }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetaDescription {
    pub source_id: String,
    pub structure: Vec<String>,
    pub style_notes: String,
    pub specialty: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub meta_source_id: String,
    pub generator_provider_id: String,
    pub created_at: String,
    pub pipeline_version: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClinicalChart {
    pub chart_id: String,
    pub lines: Vec<String>,
    pub seed_code: String,
    pub target_codes: Vec<String>,
    pub domain_tags: BTreeSet<Domain>,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum AssignmentSource {
    #[default]
    Gold,
    Predicted,
    Expert,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeAssignment {
    pub code: String,
    pub rationale: String,
    #[serde(default)]
    pub evidence_lines: BTreeSet<usize>,
    #[serde(default)]
    pub source: AssignmentSource,
}

/// One line of `gold.jsonl` (or of a predictions file).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub chart_id: String,
    pub assignments: Vec<CodeAssignment>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    MetaDerive,
    SeedSample,
    CoOccurring,
    NoteGenerate,
    PhiScreen,
    SourceOverlap,
    Generated,
    LabelWindow,
    Describe,
    Resolve,
    Select,
    Labeled,
}

impl Stage {
    pub fn is_labeling(self) -> bool {
        matches!(
            self,
            Stage::LabelWindow | Stage::Describe | Stage::Resolve | Stage::Select | Stage::Labeled
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredCode {
    pub code: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub stage: Stage,
    pub chart_id: String,
    pub inputs_hash: String,
    pub outputs_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidates: Option<Vec<ScoredCode>>,
    pub discarded: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

impl AuditRecord {
    pub fn new(
        stage: Stage,
        chart_id: &str,
        inputs: &impl Serialize,
        outputs: &impl Serialize,
    ) -> Self {
        Self {
            stage,
            chart_id: chart_id.to_string(),
            inputs_hash: hash_json(inputs),
            outputs_hash: hash_json(outputs),
            candidates: None,
            discarded: false,
            reason: None,
        }
    }

    pub fn with_candidates(mut self, candidates: Vec<ScoredCode>) -> Self {
        self.candidates = Some(candidates);
        self
    }

    pub fn with_reason(mut self, reason: impl Into<String>) -> Self {
        self.reason = Some(reason.into());
        self
    }

    pub fn discard(mut self, reason: impl Into<String>) -> Self {
        self.discarded = true;
        self.reason = Some(reason.into());
        self
    }
}

pub(crate) fn hash_json(value: &impl Serialize) -> String {
    sha256_hex(serde_json::to_vec(value).expect("audit values serialize"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chart_round_trips_as_json() {
        let chart = ClinicalChart {
            chart_id: "icd-00000-abc".into(),
            lines: vec!["HPI: seen".into()],
            seed_code: "I10".into(),
            target_codes: vec!["I10".into()],
            domain_tags: [Domain::General].into(),
            provenance: Provenance {
                meta_source_id: "builtin-1".into(),
                generator_provider_id: "mock".into(),
                created_at: DEFAULT_CREATED_AT.into(),
                pipeline_version: PIPELINE_VERSION.into(),
            },
        };
        let text = serde_json::to_string(&chart).unwrap();
        assert_eq!(serde_json::from_str::<ClinicalChart>(&text).unwrap(), chart);
        let a: CodeAssignment = serde_json::from_str(r#"{"code":"I10","rationale":"r"}"#).unwrap();
        assert!(a.evidence_lines.is_empty());
        assert_eq!(a.source, AssignmentSource::Gold);
    }

    #[test]
    fn discard_sets_reason() {
        let r = AuditRecord::new(Stage::Labeled, "c", &1, &2).discard("x");
        assert!(r.discarded);
        assert_eq!(r.reason.as_deref(), Some("x"));
    }
}
