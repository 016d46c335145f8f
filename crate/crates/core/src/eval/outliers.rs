use serde::{Deserialize, Serialize};

pub const DEFAULT_MIN_CASES: usize = 10;
pub const IQR_FACTOR: f64 = 1.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryScore {
    pub category: String,
    pub f1: f64,
    pub eval_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outlier {
    pub category: String,
    pub f1: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IqrReport {
    pub min_cases: usize,
    pub eligible: usize,
    pub q1: Option<f64>,
    pub q3: Option<f64>,
    pub lower_bound: Option<f64>,
    pub outliers: Vec<Outlier>,
    /// Set when fewer than four categories met `min_cases`.
    pub insufficient: bool,
}

/// Linear interpolation between order statistics at position (n-1)q.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty data");
    let pos = (sorted.len() - 1) as f64 * q;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Low-side IQR outliers among categories with at least `min_cases` cases.
pub fn iqr_outliers(scores: &[CategoryScore], min_cases: usize) -> IqrReport {
    let eligible: Vec<&CategoryScore> = scores
        .iter()
        .filter(|s| s.eval_count >= min_cases)
        .collect();
    if eligible.len() < 4 {
        return IqrReport {
            min_cases,
            eligible: eligible.len(),
            q1: None,
            q3: None,
            lower_bound: None,
            outliers: Vec::new(),
            insufficient: true,
        };
    }
    let mut f1s: Vec<f64> = eligible.iter().map(|s| s.f1).collect();
    f1s.sort_by(f64::total_cmp);
    let q1 = quantile(&f1s, 0.25);
    let q3 = quantile(&f1s, 0.75);
    let bound = q1 - IQR_FACTOR * (q3 - q1);
    let mut outliers: Vec<Outlier> = eligible
        .iter()
        .filter(|s| s.f1 < bound)
        .map(|s| Outlier {
            category: s.category.clone(),
            f1: s.f1,
            bound,
        })
        .collect();
    outliers.sort_by(|a, b| {
        a.f1.total_cmp(&b.f1)
            .then_with(|| a.category.cmp(&b.category))
    });
    IqrReport {
        min_cases,
        eligible: eligible.len(),
        q1: Some(q1),
        q3: Some(q3),
        lower_bound: Some(bound),
        outliers,
        insufficient: false,
    }
}
