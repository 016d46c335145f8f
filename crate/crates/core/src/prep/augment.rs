use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::render::{render_prompt, TemplatePack, TrainingSample};
use super::tokenizer::Tokenizer;
use crate::synth::{CodeAssignment, CorpusKind};

pub const DEFAULT_AUGMENT_FRACTION: f64 = 0.30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AugmentMode {
    /// Paired originals are dropped in favour of their composite.
    #[default]
    Replace,
    /// Composites are appended and originals kept.
    Add,
}

impl std::str::FromStr for AugmentMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "replace" => Ok(AugmentMode::Replace),
            "add" => Ok(AugmentMode::Add),
            _ => Err(format!(
                "unknown augment mode {s:?} (expected add or replace)"
            )),
        }
    }
}

/// A note with its labels, before rendering.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledNote {
    pub origin_chart_ids: Vec<String>,
    pub lines: Vec<String>,
    pub assignments: Vec<CodeAssignment>,
}

impl LabeledNote {
    pub fn render(
        &self,
        kind: CorpusKind,
        pack: &TemplatePack,
        tokenizer: &dyn Tokenizer,
    ) -> TrainingSample {
        render_prompt(
            self.origin_chart_ids.clone(),
            &self.lines,
            &self.assignments,
            kind,
            pack,
            tokenizer,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentReport {
    pub requested_pairs: usize,
    pub formed_pairs: usize,
    /// Candidate pairs rejected for exceeding the token limit.
    pub oversized_draws: usize,
    pub underfilled: bool,
    pub samples_in: usize,
    pub samples_out: usize,
}

/// Appends B after A. B's evidence indices shift by `A.lines.len()`; a code
/// present in both keeps A's rationale and the union of evidence.
pub fn concat_pair(a: &LabeledNote, b: &LabeledNote) -> LabeledNote {
    let offset = a.lines.len();
    let mut assignments = a.assignments.clone();
    for lb in &b.assignments {
        let shifted = lb.evidence_lines.iter().map(|i| i + offset);
        match assignments.iter_mut().find(|x| x.code == lb.code) {
            Some(existing) => existing.evidence_lines.extend(shifted),
            None => assignments.push(CodeAssignment {
                evidence_lines: shifted.collect(),
                ..lb.clone()
            }),
        }
    }
    LabeledNote {
        origin_chart_ids: a
            .origin_chart_ids
            .iter()
            .chain(&b.origin_chart_ids)
            .cloned()
            .collect(),
        lines: a.lines.iter().chain(&b.lines).cloned().collect(),
        assignments,
    }
}

/// Pairs `floor(fraction * n / 2)` disjoint notes into composites. Draw order
/// is a seeded shuffle; a partner that would push the rendered composite
/// past `max_len` tokens is skipped and the next one tried.
#[allow(clippy::too_many_arguments)]
pub fn augment(
    notes: &[LabeledNote],
    fraction: f64,
    seed: u64,
    mode: AugmentMode,
    kind: CorpusKind,
    pack: &TemplatePack,
    tokenizer: &dyn Tokenizer,
    max_len: usize,
) -> (Vec<LabeledNote>, AugmentReport) {
    let n = notes.len();
    let requested = (fraction.clamp(0.0, 1.0) * n as f64 / 2.0).floor() as usize;
    let mut available: Vec<usize> = (0..n).collect();
    available.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let mut pairs: Vec<(usize, usize, LabeledNote)> = Vec::new();
    let mut oversized = 0;
    while pairs.len() < requested && available.len() >= 2 {
        let a = available.remove(0);
        let mut found = None;
        for (pos, &b) in available.iter().enumerate() {
            let composite = concat_pair(&notes[a], &notes[b]);
            if composite.render(kind, pack, tokenizer).token_count <= max_len {
                found = Some((pos, composite));
                break;
            }
            oversized += 1;
        }
        if let Some((pos, composite)) = found {
            let b = available.remove(pos);
            pairs.push((a, b, composite));
        }
    }

    let mut out = Vec::new();
    match mode {
        AugmentMode::Replace => {
            let mut slot: Vec<Option<&LabeledNote>> = notes.iter().map(Some).collect();
            let mut composite_at = vec![None; n];
            for (a, b, c) in &pairs {
                slot[*b] = None;
                composite_at[*a] = Some(c);
            }
            for i in 0..n {
                if let Some(c) = composite_at[i] {
                    out.push(c.clone());
                } else if let Some(note) = slot[i] {
                    out.push(note.clone());
                }
            }
        }
        AugmentMode::Add => {
            out.extend(notes.iter().cloned());
            out.extend(pairs.iter().map(|(_, _, c)| c.clone()));
        }
    }
    let report = AugmentReport {
        requested_pairs: requested,
        formed_pairs: pairs.len(),
        oversized_draws: oversized,
        underfilled: pairs.len() < requested,
        samples_in: n,
        samples_out: out.len(),
    };
    (out, report)
}
