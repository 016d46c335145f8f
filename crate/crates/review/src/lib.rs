//! Expert review of generated labels: an append-only decision log, ground
//! truth export, domain filtering and evaluation against expert labels, plus
//! the HTTP API the review UI talks to.

pub mod api;
mod expert;
mod store;

pub use api::{router, serve, AppState, ServeConfig};
pub use expert::{
    evaluate_expert, export_ground_truth, filter_domain, read_ground_truth, write_ground_truth,
    ExpertGroundTruth, ExpertReport, ExportMode, FilterLog, FilteredPredictions, EXPERT_GOLD_FILE,
    EXPERT_GOLD_META_FILE,
};
pub use store::{DecisionStore, ReviewDecision, ReviewState, Verdict};

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use mcf_core::jsonl::{read_jsonl, JsonlError};
use mcf_core::synth::{ClinicalChart, CodeAssignment, LabelRecord};
use mcf_core::taxonomy::parse_icd;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ReviewError {
    #[error("unknown chart {0}")]
    UnknownChart(String),
    #[error("chart {chart_id} has no label {code}")]
    UnknownLabel { chart_id: String, code: String },
    #[error("{0}")]
    Invalid(String),
    #[error("review incomplete: {undecided} of {total} labels undecided")]
    IncompleteReview { undecided: usize, total: usize },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
    #[error("server: {0}")]
    Server(String),
}

impl ReviewError {
    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> ReviewError {
        let path = path.into();
        move |source| ReviewError::Io { path, source }
    }
}

/// Label key shared by gold records and decisions: normalized ICD code when
/// the code parses as one, else the trimmed uppercase text.
pub fn label_key(code: &str) -> String {
    parse_icd(code)
        .map(|c| c.normalized().to_string())
        .unwrap_or_else(|_| code.trim().to_ascii_uppercase())
}

/// Charts under review with their labels, in chart-id order.
#[derive(Debug, Clone, Default)]
pub struct ReviewCorpus {
    pub charts: BTreeMap<String, ClinicalChart>,
    pub labels: BTreeMap<String, Vec<CodeAssignment>>,
}

impl ReviewCorpus {
    pub fn new(charts: Vec<ClinicalChart>, gold: Vec<LabelRecord>) -> Result<Self, ReviewError> {
        let charts: BTreeMap<String, ClinicalChart> = charts
            .into_iter()
            .map(|c| (c.chart_id.clone(), c))
            .collect();
        let mut labels: BTreeMap<String, Vec<CodeAssignment>> =
            charts.keys().map(|k| (k.clone(), Vec::new())).collect();
        for g in gold {
            let slot = labels.get_mut(&g.chart_id).ok_or_else(|| {
                ReviewError::Invalid(format!("gold labels for unknown chart {}", g.chart_id))
            })?;
            for a in g.assignments {
                if !slot
                    .iter()
                    .any(|x| label_key(&x.code) == label_key(&a.code))
                {
                    slot.push(a);
                }
            }
        }
        Ok(Self { charts, labels })
    }

    pub fn load(charts: &Path, gold: &Path) -> Result<Self, ReviewError> {
        Self::new(read_jsonl(charts)?, read_jsonl(gold)?)
    }

    pub fn total_labels(&self) -> usize {
        self.labels.values().map(Vec::len).sum()
    }

    pub fn find_label(&self, chart_id: &str, code: &str) -> Result<&CodeAssignment, ReviewError> {
        let labels = self
            .labels
            .get(chart_id)
            .ok_or_else(|| ReviewError::UnknownChart(chart_id.to_string()))?;
        let key = label_key(code);
        labels
            .iter()
            .find(|a| label_key(&a.code) == key)
            .ok_or_else(|| ReviewError::UnknownLabel {
                chart_id: chart_id.to_string(),
                code: code.to_string(),
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub decided: usize,
    pub total: usize,
}

impl Progress {
    pub fn completeness(&self) -> f64 {
        if self.total == 0 {
            1.0
        } else {
            self.decided as f64 / self.total as f64
        }
    }
}

/// Labels with a decision from `reviewer`, or from anyone when `None`.
pub fn chart_progress(
    corpus: &ReviewCorpus,
    state: &ReviewState,
    chart_id: &str,
    reviewer: Option<&str>,
) -> Progress {
    let labels = corpus.labels.get(chart_id).map_or(&[][..], Vec::as_slice);
    let decided = labels
        .iter()
        .filter(|a| {
            state
                .decisions_for(chart_id, &label_key(&a.code))
                .any(|d| reviewer.is_none_or(|r| d.reviewer_id == r))
        })
        .count();
    Progress {
        decided,
        total: labels.len(),
    }
}

pub fn overall_progress(
    corpus: &ReviewCorpus,
    state: &ReviewState,
    reviewer: Option<&str>,
) -> Progress {
    corpus
        .charts
        .keys()
        .map(|c| chart_progress(corpus, state, c, reviewer))
        .fold(
            Progress {
                decided: 0,
                total: 0,
            },
            |acc, p| Progress {
                decided: acc.decided + p.decided,
                total: acc.total + p.total,
            },
        )
}
