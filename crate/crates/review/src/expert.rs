use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use mcf_core::eval::{
    evaluate_icd_doc, summarize_levels, DocEval, EvalError, IcdLabel, LevelSummary, MatchSemantics,
};
use mcf_core::hashing::sha256_hex;
use mcf_core::jsonl::{read_jsonl, write_jsonl};
use mcf_core::synth::{AssignmentSource, LabelRecord};
use mcf_core::taxonomy::{parse_icd, DomainSets};
use serde::{Deserialize, Serialize};

use crate::store::{ReviewDecision, ReviewState, Verdict};
use crate::{label_key, ReviewCorpus, ReviewError};

pub const EXPERT_GOLD_FILE: &str = "expert_gold.jsonl";
pub const EXPERT_GOLD_META_FILE: &str = "expert_gold.meta.json";

/// Levels reported for expert evaluation.
const EXPERT_LEVELS: [usize; 4] = [0, 1, 2, 3];

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "reviewer")]
pub enum ExportMode {
    /// Most recent decision by any reviewer.
    #[default]
    Latest,
    /// Decisions of one named reviewer only.
    Reviewer(String),
    /// Accepted only when every reviewer who decided accepted.
    Unanimous,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelRef {
    pub chart_id: String,
    pub code: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertGroundTruth {
    pub review_session_id: String,
    pub mode: ExportMode,
    pub completeness: f64,
    pub charts: Vec<LabelRecord>,
    pub rejected: Vec<LabelRef>,
    /// Labels left undecided; non-empty only for forced exports.
    pub undecided: Vec<LabelRef>,
}

fn verdict(decisions: &[&ReviewDecision], mode: &ExportMode) -> Option<Verdict> {
    match mode {
        ExportMode::Latest => decisions
            .iter()
            .max_by(|a, b| {
                a.decided_at
                    .cmp(&b.decided_at)
                    .then_with(|| a.reviewer_id.cmp(&b.reviewer_id))
            })
            .map(|d| d.verdict),
        ExportMode::Reviewer(r) => decisions
            .iter()
            .find(|d| &d.reviewer_id == r)
            .map(|d| d.verdict),
        ExportMode::Unanimous => {
            if decisions.is_empty() {
                None
            } else if decisions.iter().all(|d| d.verdict == Verdict::Accept) {
                Some(Verdict::Accept)
            } else {
                Some(Verdict::Reject)
            }
        }
    }
}

/// Accepted labels per chart. Every chart is present, possibly with an
/// empty list. Undecided labels block the export unless `force` is set.
pub fn export_ground_truth(
    corpus: &ReviewCorpus,
    state: &ReviewState,
    mode: &ExportMode,
    force: bool,
) -> Result<ExpertGroundTruth, ReviewError> {
    let mut charts = Vec::new();
    let mut rejected = Vec::new();
    let mut undecided = Vec::new();
    for (chart_id, labels) in &corpus.labels {
        let mut accepted = Vec::new();
        for a in labels {
            let key = label_key(&a.code);
            let ds: Vec<&ReviewDecision> = state.decisions_for(chart_id, &key).collect();
            let r = LabelRef {
                chart_id: chart_id.clone(),
                code: a.code.clone(),
            };
            match verdict(&ds, mode) {
                Some(Verdict::Accept) => accepted.push(mcf_core::synth::CodeAssignment {
                    source: AssignmentSource::Expert,
                    ..a.clone()
                }),
                Some(Verdict::Reject) => rejected.push(r),
                None => undecided.push(r),
            }
        }
        charts.push(LabelRecord {
            chart_id: chart_id.clone(),
            assignments: accepted,
        });
    }
    let total = corpus.total_labels();
    if !undecided.is_empty() && !force {
        return Err(ReviewError::IncompleteReview {
            undecided: undecided.len(),
            total,
        });
    }
    let decisions: Vec<&ReviewDecision> = state.decisions().collect();
    let session_input = serde_json::to_vec(&(&decisions, mode)).expect("decisions serialize");
    Ok(ExpertGroundTruth {
        review_session_id: format!("rs-{}", &sha256_hex(session_input)[..16]),
        mode: mode.clone(),
        completeness: if total == 0 {
            1.0
        } else {
            (total - undecided.len()) as f64 / total as f64
        },
        charts,
        rejected,
        undecided,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct GroundTruthMeta<'a> {
    review_session_id: &'a str,
    mode: &'a ExportMode,
    completeness: f64,
    accepted: usize,
    rejected: usize,
    rejected_labels: &'a [LabelRef],
    undecided: &'a [LabelRef],
}

#[derive(Deserialize)]
struct StoredMeta {
    review_session_id: String,
    mode: ExportMode,
    completeness: f64,
    #[serde(default)]
    rejected_labels: Vec<LabelRef>,
    #[serde(default)]
    undecided: Vec<LabelRef>,
}

pub fn write_ground_truth(dir: &Path, gt: &ExpertGroundTruth) -> Result<(), ReviewError> {
    std::fs::create_dir_all(dir).map_err(ReviewError::io(dir))?;
    write_jsonl(&dir.join(EXPERT_GOLD_FILE), &gt.charts)?;
    let meta = GroundTruthMeta {
        review_session_id: &gt.review_session_id,
        mode: &gt.mode,
        completeness: gt.completeness,
        accepted: gt.charts.iter().map(|c| c.assignments.len()).sum(),
        rejected: gt.rejected.len(),
        rejected_labels: &gt.rejected,
        undecided: &gt.undecided,
    };
    let path = dir.join(EXPERT_GOLD_META_FILE);
    std::fs::write(
        &path,
        serde_json::to_string_pretty(&meta).expect("meta serializes") + "\n",
    )
    .map_err(ReviewError::io(&path))
}

/// Reads back what `write_ground_truth` wrote.
pub fn read_ground_truth(dir: &Path) -> Result<ExpertGroundTruth, ReviewError> {
    let charts: Vec<LabelRecord> = read_jsonl(&dir.join(EXPERT_GOLD_FILE))?;
    let path = dir.join(EXPERT_GOLD_META_FILE);
    let text = std::fs::read_to_string(&path).map_err(ReviewError::io(&path))?;
    let meta: StoredMeta = serde_json::from_str(&text)
        .map_err(|e| ReviewError::Invalid(format!("{}: {e}", path.display())))?;
    Ok(ExpertGroundTruth {
        review_session_id: meta.review_session_id,
        mode: meta.mode,
        completeness: meta.completeness,
        charts,
        rejected: meta.rejected_labels,
        undecided: meta.undecided,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FilterLog {
    pub kept_per_domain: BTreeMap<String, usize>,
    pub removed: usize,
    pub removed_by_category: BTreeMap<String, usize>,
}

/// Predictions restricted to the configured domain sets. Only
/// `filter_domain` builds one, so expert evaluation always runs on
/// filtered predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct FilteredPredictions {
    records: Vec<LabelRecord>,
    pub log: FilterLog,
}

impl FilteredPredictions {
    pub fn records(&self) -> &[LabelRecord] {
        &self.records
    }
}

pub fn filter_domain(preds: &[LabelRecord], domains: &DomainSets) -> FilteredPredictions {
    let mut log = FilterLog::default();
    let records = preds
        .iter()
        .map(|r| {
            let assignments = r
                .assignments
                .iter()
                .filter(|a| {
                    let category = parse_icd(&a.code).ok().map(|c| c.category().to_string());
                    match category
                        .as_deref()
                        .and_then(|c| domains.domain_of_category(c))
                    {
                        Some(d) => {
                            *log.kept_per_domain.entry(d.to_string()).or_default() += 1;
                            true
                        }
                        None => {
                            log.removed += 1;
                            *log.removed_by_category
                                .entry(category.unwrap_or_else(|| "invalid".into()))
                                .or_default() += 1;
                            false
                        }
                    }
                })
                .cloned()
                .collect();
            LabelRecord {
                chart_id: r.chart_id.clone(),
                assignments,
            }
        })
        .collect();
    FilteredPredictions { records, log }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertReport {
    pub review_session_id: String,
    pub n_charts: usize,
    pub levels: Vec<LevelSummary>,
    pub filter: FilterLog,
    pub docs: Vec<DocEval>,
}

/// Chart-level P/R/F1 at levels 0-3 with standard errors, over the charts
/// in the expert ground truth.
pub fn evaluate_expert(
    preds: &FilteredPredictions,
    gt: &ExpertGroundTruth,
    semantics: MatchSemantics,
) -> Result<ExpertReport, EvalError> {
    let by_chart: HashMap<&str, &LabelRecord> = preds
        .records
        .iter()
        .map(|r| (r.chart_id.as_str(), r))
        .collect();
    let parse = |r: &LabelRecord| -> Vec<IcdLabel> {
        r.assignments
            .iter()
            .filter_map(|a| IcdLabel::from_assignment(a).ok())
            .collect()
    };
    let docs: Vec<DocEval> = gt
        .charts
        .iter()
        .map(|g| {
            let p = by_chart
                .get(g.chart_id.as_str())
                .map(|r| parse(r))
                .unwrap_or_default();
            evaluate_icd_doc(&g.chart_id, &p, &parse(g), semantics)
        })
        .collect();
    Ok(ExpertReport {
        review_session_id: gt.review_session_id.clone(),
        n_charts: docs.len(),
        levels: summarize_levels(&docs, &EXPERT_LEVELS)?,
        filter: preds.log.clone(),
        docs,
    })
}
