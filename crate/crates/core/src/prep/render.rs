use std::path::Path;

use serde::{Deserialize, Serialize};

use super::tokenizer::Tokenizer;
use super::PrepError;
use crate::gateway::{CptAssignmentRecord, Evidence, IcdAssignmentRecord, Payload};
use crate::hashing::sha256_hex;
use crate::synth::{CodeAssignment, CorpusKind};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingSample {
    pub sample_id: String,
    pub prompt_text: String,
    pub target_text: String,
    pub token_count: usize,
    pub origin_chart_ids: Vec<String>,
}

/// Versioned prompt text files: VERSION, system.txt, instruction_icd.txt,
/// instruction_cpt.txt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplatePack {
    pub version: String,
    pub system: String,
    pub instruction_icd: String,
    pub instruction_cpt: String,
}

impl TemplatePack {
    pub fn bundled() -> Self {
        Self {
            version: include_str!("../../data/templates/v1/VERSION")
                .trim()
                .to_string(),
            system: include_str!("../../data/templates/v1/system.txt")
                .trim_end()
                .to_string(),
            instruction_icd: include_str!("../../data/templates/v1/instruction_icd.txt")
                .trim_end()
                .to_string(),
            instruction_cpt: include_str!("../../data/templates/v1/instruction_cpt.txt")
                .trim_end()
                .to_string(),
        }
    }

    pub fn load(dir: &Path) -> Result<Self, PrepError> {
        let read = |name: &str| {
            let path = dir.join(name);
            match std::fs::read_to_string(&path) {
                Ok(text) => Ok(text.trim_end().to_string()),
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                    Err(PrepError::TemplateMissing(path))
                }
                Err(e) => Err(PrepError::Io { path, source: e }),
            }
        };
        Ok(Self {
            version: read("VERSION")?.trim().to_string(),
            system: read("system.txt")?,
            instruction_icd: read("instruction_icd.txt")?,
            instruction_cpt: read("instruction_cpt.txt")?,
        })
    }

    pub fn instruction(&self, kind: CorpusKind) -> &str {
        match kind {
            CorpusKind::Icd => &self.instruction_icd,
            CorpusKind::Cpt => &self.instruction_cpt,
        }
    }
}

/// Note body as the model sees it: one `[i] text` line per chart line.
pub fn numbered_note(lines: &[String]) -> String {
    let mut out = String::new();
    for (i, l) in lines.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        out.push_str(&format!("[{i}] {l}"));
    }
    out
}

pub fn render_prompt_text(pack: &TemplatePack, kind: CorpusKind, lines: &[String]) -> String {
    format!(
        "{}\n\n{}\n\n{}",
        pack.system,
        pack.instruction(kind),
        numbered_note(lines)
    )
}

/// Canonical target: the compact JSON of the assignment schema.
pub fn target_text(kind: CorpusKind, assignments: &[CodeAssignment]) -> String {
    let payload = match kind {
        CorpusKind::Icd => Payload::IcdAssignments(
            assignments
                .iter()
                .map(|a| IcdAssignmentRecord {
                    code: a.code.clone(),
                    rationale: a.rationale.clone(),
                    evidence: Evidence {
                        line_index: a.evidence_lines.iter().copied().collect(),
                        quote: None,
                    },
                })
                .collect(),
        ),
        CorpusKind::Cpt => Payload::CptAssignments(
            assignments
                .iter()
                .map(|a| CptAssignmentRecord {
                    code: a.code.clone(),
                    rationale: a.rationale.clone(),
                })
                .collect(),
        ),
    };
    payload.to_json_text()
}

/// Text whose token length is a sample's `token_count`.
pub fn sample_text(prompt: &str, target: &str) -> String {
    format!("{prompt}\n{target}")
}

pub fn render_prompt(
    origin_chart_ids: Vec<String>,
    lines: &[String],
    assignments: &[CodeAssignment],
    kind: CorpusKind,
    pack: &TemplatePack,
    tokenizer: &dyn Tokenizer,
) -> TrainingSample {
    assert!(
        !origin_chart_ids.is_empty(),
        "a sample needs at least one origin chart"
    );
    let prompt_text = render_prompt_text(pack, kind, lines);
    let target_text = target_text(kind, assignments);
    let sample_id = format!(
        "s-{}",
        &sha256_hex(format!("{prompt_text}\u{0}{target_text}"))[..16]
    );
    let token_count = tokenizer.count(&sample_text(&prompt_text, &target_text));
    TrainingSample {
        sample_id,
        prompt_text,
        target_text,
        token_count,
        origin_chart_ids,
    }
}
