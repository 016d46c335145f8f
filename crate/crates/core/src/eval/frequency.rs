use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::outliers::CategoryScore;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyRow {
    pub category: String,
    pub train_count: usize,
    pub eval_f1: f64,
}

/// Training-count bin `[lower, upper)`; the first bin holds zero counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyBin {
    pub lower: usize,
    pub upper: usize,
    pub n_categories: usize,
    pub mean_f1: f64,
    pub var_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyAnalysis {
    pub rows: Vec<FrequencyRow>,
    pub bins: Vec<FrequencyBin>,
}

/// Decade bins: 0, 1-9, 10-99, ...
fn bin_bounds(count: usize) -> (usize, usize) {
    if count == 0 {
        return (0, 1);
    }
    let mut lower = 1;
    while lower * 10 <= count {
        lower *= 10;
    }
    (lower, lower * 10)
}

pub fn frequency_analysis(
    train_counts: &BTreeMap<String, usize>,
    scores: &[CategoryScore],
) -> FrequencyAnalysis {
    let mut rows: Vec<FrequencyRow> = scores
        .iter()
        .map(|s| FrequencyRow {
            category: s.category.clone(),
            train_count: train_counts.get(&s.category).copied().unwrap_or(0),
            eval_f1: s.f1,
        })
        .collect();
    rows.sort_by(|a, b| {
        a.train_count
            .cmp(&b.train_count)
            .then_with(|| a.category.cmp(&b.category))
    });

    let mut grouped: BTreeMap<(usize, usize), Vec<f64>> = BTreeMap::new();
    for r in &rows {
        grouped
            .entry(bin_bounds(r.train_count))
            .or_default()
            .push(r.eval_f1);
    }
    let bins = grouped
        .into_iter()
        .map(|((lower, upper), f1s)| {
            let n = f1s.len() as f64;
            let mean = f1s.iter().sum::<f64>() / n;
            FrequencyBin {
                lower,
                upper,
                n_categories: f1s.len(),
                mean_f1: mean,
                var_f1: f1s.iter().map(|f| (f - mean).powi(2)).sum::<f64>() / n,
            }
        })
        .collect();
    FrequencyAnalysis { rows, bins }
}

pub fn frequency_csv(a: &FrequencyAnalysis) -> String {
    let mut out = String::from("category,train_count,eval_f1\n");
    for r in &a.rows {
        out.push_str(&format!(
            "{},{},{:.6}\n",
            r.category, r.train_count, r.eval_f1
        ));
    }
    out
}
