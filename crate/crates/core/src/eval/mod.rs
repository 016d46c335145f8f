//! Metric engine: hierarchical matching, document scores, corpus and
//! domain aggregation, outlier and frequency analyses.

mod aggregate;
mod frequency;
mod matching;
mod outliers;
mod report;

pub use aggregate::{
    aggregate_corpus, level_label, mean_se, per_code_rows, summarize_levels, weighted_aggregate,
    weighted_domain_aggregate, CodeRow, GroupRow, LevelScore, LevelSummary, MeanSe, MeanStd,
};
pub use frequency::{
    frequency_analysis, frequency_csv, FrequencyAnalysis, FrequencyBin, FrequencyRow,
};
pub use matching::{
    collapse, cpt_set_match, doc_prf, evaluate_cpt_doc, evaluate_icd_doc, jaccard, match_level,
    DocEval, IcdLabel, LevelCounts, MatchSemantics, Prf, EVIDENCE_LEVEL, ICD_LEVELS,
};
pub use outliers::{
    iqr_outliers, quantile, CategoryScore, IqrReport, Outlier, DEFAULT_MIN_CASES, IQR_FACTOR,
};
pub use report::{
    evaluate_corpus, outliers_csv, render_markdown, response_quality, train_counts, write_report,
    EvalInput, EvalReport, FREQ_CSV, OUTLIERS_CSV, REPORT_JSON, REPORT_MD,
};

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no documents to evaluate")]
    NoDocuments,
    #[error("catalog drift: gold uses version {gold}, predictions use {pred}")]
    CatalogDrift { gold: String, pred: String },
    #[error("gold label {code:?} on {chart_id} is invalid: {message}")]
    InvalidGold {
        chart_id: String,
        code: String,
        message: String,
    },
    #[error("inconsistent evaluation input: {0}")]
    Inconsistent(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}
