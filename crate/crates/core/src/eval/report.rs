use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::aggregate::{
    aggregate_corpus, per_code_rows, weighted_aggregate, weighted_domain_aggregate,
};
use super::aggregate::{CodeRow, GroupRow, LevelScore};
use super::frequency::{frequency_analysis, frequency_csv, FrequencyAnalysis};
use super::matching::{evaluate_cpt_doc, evaluate_icd_doc, DocEval, IcdLabel, MatchSemantics};
use super::outliers::{iqr_outliers, CategoryScore, IqrReport};
use super::EvalError;
use crate::synth::LabelRecord;
use crate::taxonomy::{parse_cpt, parse_icd, CodeCatalog, CodeSystem, Domain, DomainSets};

pub const REPORT_JSON: &str = "report.json";
pub const REPORT_MD: &str = "report.md";
pub const FREQ_CSV: &str = "freq.csv";
pub const OUTLIERS_CSV: &str = "outliers.csv";

pub const COMBINED: &str = "Combined";
pub const COMBINED_WITHOUT_SDOH: &str = "Combined w/o SDoH";

pub struct EvalInput<'a> {
    pub catalog: &'a CodeCatalog,
    pub domains: &'a DomainSets,
    pub gold: &'a [LabelRecord],
    pub pred: &'a [LabelRecord],
    /// Training labels for the frequency analysis.
    pub train_gold: Option<&'a [LabelRecord]>,
    pub semantics: MatchSemantics,
    pub min_cases: usize,
    /// Catalog versions recorded by the runs that produced each side.
    pub gold_catalog_version: Option<String>,
    pub pred_catalog_version: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub system: CodeSystem,
    pub catalog_version: String,
    pub semantics: MatchSemantics,
    pub n_docs: usize,
    pub levels: Vec<LevelScore>,
    pub jaccard_mean: Option<f64>,
    pub response_quality: f64,
    /// Documents with neither predictions nor gold labels (scored 1.0).
    pub vacuous_docs: usize,
    pub duplicate_predictions: usize,
    pub invalid_predicted_codes: usize,
    /// Prediction records whose chart has no gold record.
    pub unmatched_prediction_records: usize,
    pub per_category: Vec<GroupRow>,
    pub per_chapter: Vec<GroupRow>,
    pub per_domain: Vec<GroupRow>,
    pub outliers: IqrReport,
    pub frequency: Option<FrequencyAnalysis>,
    pub docs: Vec<DocEval>,
}

pub fn response_quality(docs: &[DocEval]) -> f64 {
    if docs.is_empty() {
        return 0.0;
    }
    docs.iter().filter(|d| d.no_valid_prediction).count() as f64 / docs.len() as f64
}

/// Per-category scoring key: 3-character category for ICD, the code for CPT.
fn category_key(system: CodeSystem, code: &str) -> Option<String> {
    match system {
        CodeSystem::Icd10Cm => parse_icd(code).ok().map(|c| c.category().to_string()),
        CodeSystem::Cpt => parse_cpt(code).ok().map(|c| c.as_str().to_string()),
    }
}

fn exact_key(system: CodeSystem, code: &str) -> Option<String> {
    match system {
        CodeSystem::Icd10Cm => parse_icd(code).ok().map(|c| c.render()),
        CodeSystem::Cpt => parse_cpt(code).ok().map(|c| c.as_str().to_string()),
    }
}

pub fn evaluate_corpus(input: &EvalInput) -> Result<EvalReport, EvalError> {
    let system = input.catalog.system;
    let version = input.catalog.version.clone();
    if let (Some(g), Some(p)) = (&input.gold_catalog_version, &input.pred_catalog_version) {
        if g != p {
            return Err(EvalError::CatalogDrift {
                gold: g.clone(),
                pred: p.clone(),
            });
        }
    }
    if input.gold.is_empty() {
        return Err(EvalError::NoDocuments);
    }
    let mut seen = BTreeSet::new();
    for g in input.gold {
        if !seen.insert(g.chart_id.as_str()) {
            return Err(EvalError::Inconsistent(format!(
                "chart {} appears twice in gold",
                g.chart_id
            )));
        }
        for a in &g.assignments {
            if exact_key(system, &a.code).is_none() {
                return Err(EvalError::InvalidGold {
                    chart_id: g.chart_id.clone(),
                    code: a.code.clone(),
                    message: format!("not a valid {system} code"),
                });
            }
        }
    }
    let preds: HashMap<&str, &LabelRecord> = input
        .pred
        .iter()
        .map(|p| (p.chart_id.as_str(), p))
        .collect();
    let unmatched = input
        .pred
        .iter()
        .filter(|p| !seen.contains(p.chart_id.as_str()))
        .count();

    struct DocResult {
        eval: DocEval,
        invalid: usize,
        pred_keys: Vec<String>,
        gold_keys: Vec<String>,
    }
    let results: Vec<DocResult> = input
        .gold
        .par_iter()
        .map(|g| {
            let pred = preds
                .get(g.chart_id.as_str())
                .map_or(&[][..], |p| p.assignments.as_slice());
            let valid_pred: Vec<_> = pred
                .iter()
                .filter(|a| exact_key(system, &a.code).is_some())
                .collect();
            let invalid = pred.len() - valid_pred.len();
            let eval = match system {
                CodeSystem::Icd10Cm => {
                    let p: Vec<IcdLabel> = valid_pred
                        .iter()
                        .map(|a| IcdLabel::from_assignment(a).unwrap())
                        .collect();
                    let gl: Vec<IcdLabel> = g
                        .assignments
                        .iter()
                        .map(|a| IcdLabel::from_assignment(a).unwrap())
                        .collect();
                    evaluate_icd_doc(&g.chart_id, &p, &gl, input.semantics)
                }
                CodeSystem::Cpt => {
                    let p: Vec<_> = valid_pred
                        .iter()
                        .map(|a| parse_cpt(&a.code).unwrap())
                        .collect();
                    let gl: Vec<_> = g
                        .assignments
                        .iter()
                        .map(|a| parse_cpt(&a.code).unwrap())
                        .collect();
                    evaluate_cpt_doc(&g.chart_id, &p, &gl, &version)
                }
            };
            DocResult {
                eval,
                invalid,
                pred_keys: valid_pred
                    .iter()
                    .filter_map(|a| exact_key(system, &a.code))
                    .collect(),
                gold_keys: g
                    .assignments
                    .iter()
                    .filter_map(|a| exact_key(system, &a.code))
                    .collect(),
            }
        })
        .collect();

    let docs: Vec<DocEval> = results.iter().map(|r| r.eval.clone()).collect();
    let levels = aggregate_corpus(&docs)?;
    let jaccards: Vec<f64> = docs.iter().filter_map(|d| d.jaccard_mean).collect();
    let code_rows = per_code_rows(
        &results
            .iter()
            .map(|r| (r.pred_keys.clone(), r.gold_keys.clone()))
            .collect::<Vec<_>>(),
    );

    let per_category = weighted_domain_aggregate(&code_rows, |r| category_key(system, &r.code));
    let per_chapter =
        weighted_domain_aggregate(&code_rows, |r| chapter_label(input.catalog, &r.code));
    let per_domain = match system {
        CodeSystem::Icd10Cm => domain_table(&code_rows, input.domains),
        CodeSystem::Cpt => Vec::new(),
    };
    let scores: Vec<CategoryScore> = per_category
        .iter()
        .map(|g| CategoryScore {
            category: g.group.clone(),
            f1: g.f1.mean,
            eval_count: g.n_cases,
        })
        .collect();
    let frequency = input
        .train_gold
        .map(|train| frequency_analysis(&train_counts(system, train), &scores));

    Ok(EvalReport {
        system,
        catalog_version: version,
        semantics: input.semantics,
        n_docs: docs.len(),
        levels,
        jaccard_mean: (!jaccards.is_empty())
            .then(|| jaccards.iter().sum::<f64>() / jaccards.len() as f64),
        response_quality: response_quality(&docs),
        vacuous_docs: docs
            .iter()
            .filter(|d| {
                d.levels
                    .iter()
                    .all(|l| l.pred_count == 0 && l.gold_count == 0)
            })
            .count(),
        duplicate_predictions: docs.iter().map(|d| d.duplicate_predictions).sum(),
        invalid_predicted_codes: results.iter().map(|r| r.invalid).sum(),
        unmatched_prediction_records: unmatched,
        per_category,
        per_chapter,
        per_domain,
        outliers: iqr_outliers(&scores, input.min_cases),
        frequency,
        docs,
    })
}

fn chapter_label(catalog: &CodeCatalog, code: &str) -> Option<String> {
    let label = match catalog.system {
        CodeSystem::Icd10Cm => parse_icd(code)
            .ok()
            .and_then(|c| catalog.chapter_of(&c).ok().map(|r| r.label.clone())),
        CodeSystem::Cpt => catalog
            .specialties()
            .iter()
            .find(|r| r.contains(code))
            .map(|r| r.label.clone()),
    };
    Some(label.unwrap_or_else(|| "unassigned".to_string()))
}

fn domain_table(rows: &[CodeRow], domains: &DomainSets) -> Vec<GroupRow> {
    let domain_of = |r: &CodeRow| {
        parse_icd(&r.code)
            .ok()
            .and_then(|c| domains.domain_of_category(c.category()))
    };
    let mut table = weighted_domain_aggregate(rows, |r| {
        Some(domain_of(r).unwrap_or(Domain::General).to_string())
    });
    let targeted: Vec<&CodeRow> = rows.iter().filter(|r| domain_of(r).is_some()).collect();
    if !targeted.is_empty() {
        table.push(weighted_aggregate(COMBINED, &targeted));
        let without: Vec<&CodeRow> = targeted
            .iter()
            .copied()
            .filter(|r| domain_of(r) != Some(Domain::SDoH))
            .collect();
        if !without.is_empty() {
            table.push(weighted_aggregate(COMBINED_WITHOUT_SDOH, &without));
        }
    }
    table
}

/// Training documents containing each category (ICD) or code (CPT).
pub fn train_counts(system: CodeSystem, train: &[LabelRecord]) -> BTreeMap<String, usize> {
    let mut counts = BTreeMap::new();
    for r in train {
        let keys: BTreeSet<String> = r
            .assignments
            .iter()
            .filter_map(|a| category_key(system, &a.code))
            .collect();
        for k in keys {
            *counts.entry(k).or_insert(0) += 1;
        }
    }
    counts
}

pub fn outliers_csv(r: &IqrReport) -> String {
    let mut out = String::from("category,f1,bound\n");
    for o in &r.outliers {
        out.push_str(&format!("{},{:.6},{:.6}\n", o.category, o.f1, o.bound));
    }
    out
}

pub fn render_markdown(r: &EvalReport) -> String {
    let mut md = String::new();
    let _ = writeln!(md, "# Evaluation report\n");
    let _ = writeln!(md, "- System: {} (catalog {})", r.system, r.catalog_version);
    let _ = writeln!(md, "- Documents: {}", r.n_docs);
    let _ = writeln!(md, "- Match semantics: {:?}", r.semantics);
    let _ = writeln!(
        md,
        "- Response quality (share with no valid prediction): {:.4}",
        r.response_quality
    );
    match r.jaccard_mean {
        Some(j) => {
            let _ = writeln!(md, "- Evidence Jaccard (mean over matched codes): {j:.4}");
        }
        None => {
            let _ = writeln!(md, "- Evidence Jaccard: n/a");
        }
    }
    let _ = writeln!(
        md,
        "- Vacuous documents: {}; duplicate predictions: {}; invalid predicted codes: {}\n",
        r.vacuous_docs, r.duplicate_predictions, r.invalid_predicted_codes
    );
    let _ = writeln!(md, "## Corpus scores (macro over documents)\n");
    let _ = writeln!(
        md,
        "| Level | Precision | Recall | F1 | micro F1 |\n|---|---|---|---|---|"
    );
    for l in &r.levels {
        let _ = writeln!(
            md,
            "| {} | {:.4} | {:.4} | {:.4} | {:.4} |",
            l.level, l.macro_avg.precision, l.macro_avg.recall, l.macro_avg.f1, l.micro_avg.f1
        );
    }
    let table = |md: &mut String, title: &str, rows: &[GroupRow]| {
        if rows.is_empty() {
            return;
        }
        let _ = writeln!(md, "\n## {title}\n");
        let _ = writeln!(
            md,
            "| Group | Cases | Precision | Recall | F1 |\n|---|---|---|---|---|"
        );
        for g in rows {
            let _ = writeln!(
                md,
                "| {} | {} | {:.4} ({:.4}) | {:.4} ({:.4}) | {:.4} ({:.4}) |",
                g.group,
                g.n_cases,
                g.precision.mean,
                g.precision.std,
                g.recall.mean,
                g.recall.std,
                g.f1.mean,
                g.f1.std
            );
        }
    };
    table(
        &mut md,
        "By domain (case-weighted mean and std)",
        &r.per_domain,
    );
    table(&mut md, "By chapter", &r.per_chapter);
    let _ = writeln!(
        md,
        "\n## Outliers (IQR, min {} cases)\n",
        r.outliers.min_cases
    );
    if r.outliers.insufficient {
        let _ = writeln!(
            md,
            "Fewer than four eligible categories; no outlier analysis."
        );
    } else if r.outliers.outliers.is_empty() {
        let _ = writeln!(
            md,
            "None below bound {:.4}.",
            r.outliers.lower_bound.unwrap_or(0.0)
        );
    } else {
        for o in &r.outliers.outliers {
            let _ = writeln!(md, "- {}: F1 {:.4} < {:.4}", o.category, o.f1, o.bound);
        }
    }
    if let Some(f) = &r.frequency {
        let _ = writeln!(md, "\n## F1 by training frequency\n");
        let _ = writeln!(
            md,
            "| Train count | Categories | Mean F1 | Var F1 |\n|---|---|---|---|"
        );
        for b in &f.bins {
            let _ = writeln!(
                md,
                "| [{}, {}) | {} | {:.4} | {:.4} |",
                b.lower, b.upper, b.n_categories, b.mean_f1, b.var_f1
            );
        }
    }
    md
}

pub fn write_report(dir: &Path, r: &EvalReport) -> Result<(), EvalError> {
    std::fs::create_dir_all(dir).map_err(|source| EvalError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let write = |name: &str, text: String| {
        let path = dir.join(name);
        std::fs::write(&path, text).map_err(|source| EvalError::Io { path, source })
    };
    write(
        REPORT_JSON,
        serde_json::to_string_pretty(r).expect("report serializes") + "\n",
    )?;
    write(REPORT_MD, render_markdown(r))?;
    write(
        FREQ_CSV,
        r.frequency.as_ref().map_or_else(
            || "category,train_count,eval_f1\n".to_string(),
            frequency_csv,
        ),
    )?;
    write(OUTLIERS_CSV, outliers_csv(&r.outliers))?;
    Ok(())
}
