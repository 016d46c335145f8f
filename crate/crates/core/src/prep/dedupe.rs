use std::collections::HashSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::synth::ClinicalChart;

pub const SHINGLE_CHARS: usize = 5;
pub const DEFAULT_DEDUPE_THRESHOLD: f64 = 0.85;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Removal {
    pub removed: String,
    pub duplicate_of: String,
    pub similarity: f64,
}

/// Character 5-gram shingles of the note lines joined by newlines.
pub fn char_shingles(lines: &[String]) -> HashSet<String> {
    let chars: Vec<char> = lines.join("\n").chars().collect();
    if chars.len() < SHINGLE_CHARS {
        return if chars.is_empty() {
            HashSet::new()
        } else {
            HashSet::from([chars.iter().collect()])
        };
    }
    chars
        .windows(SHINGLE_CHARS)
        .map(|w| w.iter().collect())
        .collect()
}

pub fn jaccard_sets(a: &HashSet<String>, b: &HashSet<String>) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let inter = a.intersection(b).count();
    inter as f64 / (a.len() + b.len() - inter) as f64
}

/// Greedy keep-first in chart-id order: a chart is removed when its shingle
/// Jaccard with any already-kept chart reaches `threshold`.
pub fn dedupe(charts: &[ClinicalChart], threshold: f64) -> (Vec<ClinicalChart>, Vec<Removal>) {
    let mut order: Vec<&ClinicalChart> = charts.iter().collect();
    order.sort_by(|a, b| a.chart_id.cmp(&b.chart_id));
    let shingles: Vec<HashSet<String>> =
        order.par_iter().map(|c| char_shingles(&c.lines)).collect();

    let mut kept: Vec<usize> = Vec::new();
    let mut removals = Vec::new();
    for i in 0..order.len() {
        let hit = kept
            .par_iter()
            .map(|&k| (k, jaccard_sets(&shingles[i], &shingles[k])))
            .filter(|(_, s)| *s >= threshold)
            .min_by_key(|(k, _)| *k);
        match hit {
            Some((k, similarity)) => removals.push(Removal {
                removed: order[i].chart_id.clone(),
                duplicate_of: order[k].chart_id.clone(),
                similarity,
            }),
            None => kept.push(i),
        }
    }
    (
        kept.into_iter().map(|i| order[i].clone()).collect(),
        removals,
    )
}
