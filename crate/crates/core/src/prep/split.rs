use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::PrepError;
use crate::hashing::sha256_hex;
use crate::synth::ClinicalChart;

pub const MIN_SPLIT_CHARTS: usize = 20;
pub const EVAL_FRACTION: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitRatio {
    pub train: f64,
    pub eval: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub seed: u64,
    pub ratio: SplitRatio,
    pub train_ids: Vec<String>,
    pub eval_ids: Vec<String>,
    pub corpus_hash: String,
}

/// Hash of the chart ids and texts, independent of input order.
pub fn corpus_hash(charts: &[ClinicalChart]) -> String {
    let mut items: Vec<(&str, &[String])> = charts
        .iter()
        .map(|c| (c.chart_id.as_str(), c.lines.as_slice()))
        .collect();
    items.sort();
    sha256_hex(serde_json::to_vec(&items).expect("charts serialize"))
}

/// Seeded 95/5 partition. With `manifest_path`, an existing manifest for the
/// same corpus is returned unchanged and a new one is persisted.
pub fn split(
    charts: &[ClinicalChart],
    seed: u64,
    manifest_path: Option<&Path>,
) -> Result<SplitManifest, PrepError> {
    let hash = corpus_hash(charts);
    if let Some(path) = manifest_path.filter(|p| p.exists()) {
        let text = std::fs::read_to_string(path).map_err(PrepError::io(path))?;
        let stored: SplitManifest = serde_json::from_str(&text)
            .map_err(|e| PrepError::Config(format!("{}: {e}", path.display())))?;
        if stored.corpus_hash != hash {
            return Err(PrepError::ManifestConflict {
                stored: stored.corpus_hash,
                current: hash,
            });
        }
        return Ok(stored);
    }
    let n = charts.len();
    if n < MIN_SPLIT_CHARTS {
        return Err(PrepError::TooFewCharts {
            n,
            min: MIN_SPLIT_CHARTS,
        });
    }
    let mut ids: Vec<String> = charts.iter().map(|c| c.chart_id.clone()).collect();
    ids.sort();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    // Train takes ceil(95% of n); integer arithmetic avoids float edge cases.
    let n_train = (95 * n).div_ceil(100);
    let mut eval_ids = ids.split_off(n_train);
    let mut train_ids = ids;
    train_ids.sort();
    eval_ids.sort();
    let manifest = SplitManifest {
        seed,
        ratio: SplitRatio {
            train: 1.0 - EVAL_FRACTION,
            eval: EVAL_FRACTION,
        },
        train_ids,
        eval_ids,
        corpus_hash: hash,
    };
    if let Some(path) = manifest_path {
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
        std::fs::write(path, text).map_err(PrepError::io(path))?;
    }
    Ok(manifest)
}
