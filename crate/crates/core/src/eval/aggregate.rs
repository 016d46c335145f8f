use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::matching::{doc_prf, DocEval, LevelCounts, Prf};
use super::EvalError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelScore {
    pub level: String,
    /// Mean of per-document scores; the headline number.
    pub macro_avg: Prf,
    /// Pooled counts; diagnostic only.
    pub micro_avg: Prf,
    pub n_docs: usize,
}

pub fn level_label(level: usize, n_levels: usize) -> String {
    if n_levels == 1 {
        "exact".to_string()
    } else {
        format!("L{level}")
    }
}

fn mean_prf(prfs: impl Iterator<Item = Prf>) -> Prf {
    let (mut sum, mut n) = (Prf::default(), 0usize);
    for p in prfs {
        sum.precision += p.precision;
        sum.recall += p.recall;
        sum.f1 += p.f1;
        n += 1;
    }
    let n = n.max(1) as f64;
    Prf {
        precision: sum.precision / n,
        recall: sum.recall / n,
        f1: sum.f1 / n,
    }
}

pub fn aggregate_corpus(docs: &[DocEval]) -> Result<Vec<LevelScore>, EvalError> {
    let first = docs.first().ok_or(EvalError::NoDocuments)?;
    let n_levels = first.levels.len();
    if docs.iter().any(|d| d.levels.len() != n_levels) {
        return Err(EvalError::Inconsistent(
            "documents carry different level counts".into(),
        ));
    }
    Ok((0..n_levels)
        .map(|l| {
            let pooled = docs
                .iter()
                .fold(LevelCounts::default(), |acc, d| LevelCounts {
                    true_pos: acc.true_pos + d.levels[l].true_pos,
                    pred_count: acc.pred_count + d.levels[l].pred_count,
                    gold_count: acc.gold_count + d.levels[l].gold_count,
                });
            LevelScore {
                level: level_label(l, n_levels),
                macro_avg: mean_prf(docs.iter().map(|d| doc_prf(d.levels[l]))),
                micro_avg: doc_prf(pooled),
                n_docs: docs.len(),
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MeanSe {
    pub mean: f64,
    pub se: f64,
}

/// Mean and standard error (sample std over sqrt(n)); zero error for n < 2.
pub fn mean_se(values: &[f64]) -> MeanSe {
    let n = values.len();
    if n == 0 {
        return MeanSe::default();
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return MeanSe { mean, se: 0.0 };
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    MeanSe {
        mean,
        se: var.sqrt() / (n as f64).sqrt(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelSummary {
    pub level: String,
    pub precision: MeanSe,
    pub recall: MeanSe,
    pub f1: MeanSe,
    pub n_docs: usize,
}

/// Per-level chart-level P/R/F1 with standard errors.
pub fn summarize_levels(
    docs: &[DocEval],
    levels: &[usize],
) -> Result<Vec<LevelSummary>, EvalError> {
    let first = docs.first().ok_or(EvalError::NoDocuments)?;
    let n_levels = first.levels.len();
    levels
        .iter()
        .map(|&l| {
            if l >= n_levels {
                return Err(EvalError::Inconsistent(format!("level {l} not evaluated")));
            }
            let prfs: Vec<Prf> = docs.iter().map(|d| doc_prf(d.levels[l])).collect();
            let col = |f: fn(&Prf) -> f64| mean_se(&prfs.iter().map(f).collect::<Vec<_>>());
            Ok(LevelSummary {
                level: level_label(l, n_levels),
                precision: col(|p| p.precision),
                recall: col(|p| p.recall),
                f1: col(|p| p.f1),
                n_docs: docs.len(),
            })
        })
        .collect()
}

/// Per-code (or per-group) metric row with its evaluation case count.
/// `std` carries within-row dispersion when the row is itself an aggregate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodeRow {
    pub code: String,
    pub n_cases: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub std: Option<[f64; 3]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRow {
    pub group: String,
    pub n_cases: usize,
    pub n_codes: usize,
    pub precision: MeanStd,
    pub recall: MeanStd,
    pub f1: MeanStd,
}

/// Case-weighted mean and standard deviation. Rows that carry their own
/// dispersion contribute it to the pooled variance.
pub fn weighted_aggregate(group: &str, rows: &[&CodeRow]) -> GroupRow {
    let n: usize = rows.iter().map(|r| r.n_cases).sum();
    let stat = |k: usize| -> MeanStd {
        let value = |r: &CodeRow| [r.precision, r.recall, r.f1][k];
        if n == 0 {
            return MeanStd::default();
        }
        let w = n as f64;
        let mean = rows
            .iter()
            .map(|r| r.n_cases as f64 * value(r))
            .sum::<f64>()
            / w;
        let var = rows
            .iter()
            .map(|r| {
                let inner = r.std.map_or(0.0, |s| s[k] * s[k]);
                r.n_cases as f64 * (inner + (value(r) - mean).powi(2))
            })
            .sum::<f64>()
            / w;
        MeanStd {
            mean,
            std: var.max(0.0).sqrt(),
        }
    };
    GroupRow {
        group: group.to_string(),
        n_cases: n,
        n_codes: rows.len(),
        precision: stat(0),
        recall: stat(1),
        f1: stat(2),
    }
}

/// One weighted row per group, in group-name order. Rows mapped to `None`
/// are left out.
pub fn weighted_domain_aggregate(
    rows: &[CodeRow],
    group_of: impl Fn(&CodeRow) -> Option<String>,
) -> Vec<GroupRow> {
    let mut groups: BTreeMap<String, Vec<&CodeRow>> = BTreeMap::new();
    for r in rows {
        if let Some(g) = group_of(r) {
            groups.entry(g).or_default().push(r);
        }
    }
    groups
        .iter()
        .map(|(g, members)| weighted_aggregate(g, members))
        .collect()
}

/// Per-code P/R/F1 across documents. Each document contributes its
/// deduplicated predicted and gold code keys; rows need at least one gold case.
pub fn per_code_rows(docs: &[(Vec<String>, Vec<String>)]) -> Vec<CodeRow> {
    let mut counts: BTreeMap<&str, LevelCounts> = BTreeMap::new();
    for (pred, gold) in docs {
        let p: std::collections::BTreeSet<&str> = pred.iter().map(String::as_str).collect();
        let g: std::collections::BTreeSet<&str> = gold.iter().map(String::as_str).collect();
        for c in &p {
            let e = counts.entry(c).or_default();
            e.pred_count += 1;
            if g.contains(c) {
                e.true_pos += 1;
            }
        }
        for c in &g {
            counts.entry(c).or_default().gold_count += 1;
        }
    }
    counts
        .into_iter()
        .filter(|(_, c)| c.gold_count > 0)
        .map(|(code, c)| {
            let prf = doc_prf(c);
            CodeRow {
                code: code.to_string(),
                n_cases: c.gold_count,
                precision: prf.precision,
                recall: prf.recall,
                f1: prf.f1,
                std: None,
            }
        })
        .collect()
}
