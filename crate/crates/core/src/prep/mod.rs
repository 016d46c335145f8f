//! Training-set preparation: dedupe, split, augmentation, rendering, packing.

mod augment;
mod dedupe;
mod pack;
mod render;
mod split;
pub mod tokenizer;

pub use augment::{
    augment, concat_pair, AugmentMode, AugmentReport, LabeledNote, DEFAULT_AUGMENT_FRACTION,
};
pub use dedupe::{
    char_shingles, dedupe, jaccard_sets, Removal, DEFAULT_DEDUPE_THRESHOLD, SHINGLE_CHARS,
};
pub use pack::{
    pack, packing_efficiency, unpack, unpack_all, PackConfig, PackedSequence, Segment,
    TokenizedSample, DEFAULT_MAX_LEN,
};
pub use render::{
    numbered_note, render_prompt, sample_text, target_text, TemplatePack, TrainingSample,
};
pub use split::{corpus_hash, split, SplitManifest, SplitRatio, EVAL_FRACTION, MIN_SPLIT_CHARTS};
pub use tokenizer::{ByteTokenizer, Tokenizer, WhitespaceTokenizer};

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::jsonl::{read_jsonl, write_jsonl, JsonlError};
use crate::synth::{ClinicalChart, CorpusKind, LabelRecord, CHARTS_FILE, GOLD_FILE};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const DEDUPE_LOG_FILE: &str = "dedupe_log.jsonl";
pub const TRAIN_FILE: &str = "train.jsonl";
pub const EVAL_FILE: &str = "eval.jsonl";
pub const PACKED_FILE: &str = "train.packed.jsonl";
pub const PREP_REPORT_FILE: &str = "prep_report.json";

#[derive(Debug, Error)]
pub enum PrepError {
    #[error("template file missing: {0}")]
    TemplateMissing(PathBuf),
    #[error("split needs at least {min} charts, got {n}")]
    TooFewCharts { n: usize, min: usize },
    #[error("corpus hash {current} does not match stored split manifest {stored}")]
    ManifestConflict { stored: String, current: String },
    #[error("sample {sample_id} has {tokens} tokens, limit is {max_len}")]
    OversizedSample {
        sample_id: String,
        tokens: usize,
        max_len: usize,
    },
    #[error("sample {0} has no tokens")]
    EmptySample(String),
    #[error("corrupt segment table: {0}")]
    CorruptSegments(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
}

impl PrepError {
    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> PrepError {
        let path = path.into();
        move |source| PrepError::Io { path, source }
    }
}

pub struct PrepConfig {
    pub kind: CorpusKind,
    pub corpus_dir: PathBuf,
    pub out_dir: PathBuf,
    pub dedupe_threshold: f64,
    pub split_seed: u64,
    pub augment_fraction: f64,
    pub augment_mode: AugmentMode,
    pub pack: PackConfig,
    pub templates: TemplatePack,
    pub tokenizer: Arc<dyn Tokenizer>,
}

impl PrepConfig {
    pub fn new(
        kind: CorpusKind,
        corpus_dir: impl Into<PathBuf>,
        out_dir: impl Into<PathBuf>,
    ) -> Self {
        Self {
            kind,
            corpus_dir: corpus_dir.into(),
            out_dir: out_dir.into(),
            dedupe_threshold: DEFAULT_DEDUPE_THRESHOLD,
            split_seed: 0,
            augment_fraction: DEFAULT_AUGMENT_FRACTION,
            augment_mode: AugmentMode::Replace,
            pack: PackConfig::default(),
            templates: TemplatePack::bundled(),
            tokenizer: Arc::new(WhitespaceTokenizer::default()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrepReport {
    pub kind: CorpusKind,
    pub charts_in: usize,
    pub unlabeled_skipped: usize,
    pub duplicates_removed: usize,
    pub train_charts: usize,
    pub eval_charts: usize,
    pub augment: Option<AugmentReport>,
    pub train_samples: usize,
    pub eval_samples: usize,
    pub sequences: usize,
    pub packing_efficiency: f64,
    pub max_len: usize,
    pub tokenizer: String,
    pub template_version: String,
}

/// Full prep run over a labeled corpus directory.
pub fn prepare(cfg: &PrepConfig) -> Result<PrepReport, PrepError> {
    if !(cfg.dedupe_threshold > 0.0 && cfg.dedupe_threshold <= 1.0) {
        return Err(PrepError::Config(format!(
            "dedupe threshold {} outside (0, 1]",
            cfg.dedupe_threshold
        )));
    }
    if !(0.0..=1.0).contains(&cfg.augment_fraction) {
        return Err(PrepError::Config(format!(
            "augment fraction {} outside [0, 1]",
            cfg.augment_fraction
        )));
    }
    std::fs::create_dir_all(&cfg.out_dir).map_err(PrepError::io(&cfg.out_dir))?;
    let charts: Vec<ClinicalChart> = read_jsonl(&cfg.corpus_dir.join(CHARTS_FILE))?;
    let gold: Vec<LabelRecord> = read_jsonl(&cfg.corpus_dir.join(GOLD_FILE))?;
    let labels: HashMap<&str, &LabelRecord> =
        gold.iter().map(|g| (g.chart_id.as_str(), g)).collect();
    let charts_in = charts.len();
    let labeled: Vec<ClinicalChart> = charts
        .into_iter()
        .filter(|c| labels.contains_key(c.chart_id.as_str()))
        .collect();
    let unlabeled_skipped = charts_in - labeled.len();

    let (kept, removals) = dedupe(&labeled, cfg.dedupe_threshold);
    write_jsonl(&cfg.out_dir.join(DEDUPE_LOG_FILE), &removals)?;
    let manifest = split(
        &kept,
        cfg.split_seed,
        Some(&cfg.out_dir.join(MANIFEST_FILE)),
    )?;

    let by_id: HashMap<&str, &ClinicalChart> =
        kept.iter().map(|c| (c.chart_id.as_str(), c)).collect();
    let note_for = |id: &String| -> Result<LabeledNote, PrepError> {
        let chart = by_id
            .get(id.as_str())
            .ok_or_else(|| PrepError::Config(format!("manifest lists unknown chart {id}")))?;
        Ok(LabeledNote {
            origin_chart_ids: vec![id.clone()],
            lines: chart.lines.clone(),
            assignments: labels[id.as_str()].assignments.clone(),
        })
    };
    let train_notes = manifest
        .train_ids
        .iter()
        .map(note_for)
        .collect::<Result<Vec<_>, _>>()?;
    let eval_notes = manifest
        .eval_ids
        .iter()
        .map(note_for)
        .collect::<Result<Vec<_>, _>>()?;

    let tok = cfg.tokenizer.as_ref();
    // Composites need line-indexed evidence, so only ICD corpora are augmented.
    let (train_notes, augment_report) = if cfg.kind == CorpusKind::Icd && cfg.augment_fraction > 0.0
    {
        let (notes, report) = augment(
            &train_notes,
            cfg.augment_fraction,
            cfg.split_seed,
            cfg.augment_mode,
            cfg.kind,
            &cfg.templates,
            tok,
            cfg.pack.max_len,
        );
        (notes, Some(report))
    } else {
        (train_notes, None)
    };

    let render_all = |notes: &[LabeledNote]| -> Vec<TrainingSample> {
        notes
            .par_iter()
            .map(|n| n.render(cfg.kind, &cfg.templates, tok))
            .collect()
    };
    let train = render_all(&train_notes);
    let eval = render_all(&eval_notes);
    write_jsonl(&cfg.out_dir.join(TRAIN_FILE), &train)?;
    write_jsonl(&cfg.out_dir.join(EVAL_FILE), &eval)?;

    let tokenized: Vec<TokenizedSample> = train
        .par_iter()
        .map(|s| TokenizedSample {
            sample_id: s.sample_id.clone(),
            tokens: tok.encode(&sample_text(&s.prompt_text, &s.target_text)),
        })
        .collect();
    let packed = pack(&tokenized, cfg.pack)?;
    write_jsonl(&cfg.out_dir.join(PACKED_FILE), &packed)?;

    let report = PrepReport {
        kind: cfg.kind,
        charts_in,
        unlabeled_skipped,
        duplicates_removed: removals.len(),
        train_charts: manifest.train_ids.len(),
        eval_charts: manifest.eval_ids.len(),
        augment: augment_report,
        train_samples: train.len(),
        eval_samples: eval.len(),
        sequences: packed.len(),
        packing_efficiency: packing_efficiency(&packed, cfg.pack.max_len),
        max_len: cfg.pack.max_len,
        tokenizer: tok.name().to_string(),
        template_version: cfg.templates.version.clone(),
    };
    let path = cfg.out_dir.join(PREP_REPORT_FILE);
    let text = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
    std::fs::write(&path, text).map_err(PrepError::io(&path))?;
    Ok(report)
}

pub fn read_packed(path: &Path) -> Result<Vec<PackedSequence>, PrepError> {
    Ok(read_jsonl(path)?)
}

#[cfg(test)]
mod tests;
