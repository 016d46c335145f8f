use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use regex::Regex;

use super::phi::PhiFilter;
use super::{prompts, AuditRecord, MetaDescription, Stage, SynthError};
use crate::gateway::{Gateway, Payload};
use crate::hashing::sha256_hex;

/// File that marks a directory as approved for reading real source notes.
pub const SECURE_MARKER: &str = ".mcf-secure";

/// A directory flagged for source-note ingestion. Rejected metas are
/// quarantined inside it and never leave it.
#[derive(Debug, Clone)]
pub struct SecureContext {
    dir: PathBuf,
}

impl SecureContext {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, SynthError> {
        let dir = dir.as_ref().to_path_buf();
        if !dir.join(SECURE_MARKER).is_file() {
            return Err(SynthError::NotSecure(dir));
        }
        Ok(Self { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn quarantine_dir(&self) -> PathBuf {
        self.dir.join("quarantine")
    }

    /// Source notes (`*.txt`) in file-name order.
    pub fn source_notes(&self) -> Result<Vec<(String, String)>, SynthError> {
        let mut out = Vec::new();
        for entry in std::fs::read_dir(&self.dir).map_err(SynthError::io(&self.dir))? {
            let path = entry.map_err(SynthError::io(&self.dir))?.path();
            if path.extension().is_some_and(|e| e == "txt") {
                let text = std::fs::read_to_string(&path).map_err(SynthError::io(&path))?;
                out.push((
                    path.file_name().unwrap().to_string_lossy().into_owned(),
                    text,
                ));
            }
        }
        out.sort();
        Ok(out)
    }

    fn quarantine(&self, meta: &MetaDescription) -> Result<(), SynthError> {
        let q = self.quarantine_dir();
        std::fs::create_dir_all(&q).map_err(SynthError::io(&q))?;
        let path = q.join(format!("{}.json", meta.source_id));
        let text = serde_json::to_string_pretty(meta).expect("meta serializes");
        std::fs::write(&path, text).map_err(SynthError::io(&path))
    }
}

fn section_pattern() -> &'static Regex {
    static P: OnceLock<Regex> = OnceLock::new();
    P.get_or_init(|| Regex::new(r"^\s*([A-Z][A-Za-z/&\- ]{0,38}[A-Za-z])\s*:").unwrap())
}

/// Section labels (`Label:` at line start, at most four words) in order of first use.
pub fn extract_sections(note: &str) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for line in note.lines() {
        if let Some(cap) = section_pattern().captures(line) {
            let label = cap[1].trim().to_string();
            if label.split_whitespace().count() <= 4 && !out.contains(&label) {
                out.push(label);
            }
        }
    }
    out
}

pub fn derive_meta(
    source_note: &str,
    ctx: &SecureContext,
    gateway: &Gateway,
    phi: &PhiFilter,
    seed: u64,
    audit: &mut Vec<AuditRecord>,
) -> Result<MetaDescription, SynthError> {
    let source_id = format!("src-{}", &sha256_hex(source_note)[..16]);
    let sections = extract_sections(source_note);
    let req = prompts::meta(source_note, &sections, source_note.lines().count(), seed);
    let out = gateway.chat(&req)?;
    let Payload::MetaDescription(rec) = out.payload else {
        unreachable!("validated as META_DESCRIPTION")
    };
    let meta = MetaDescription {
        source_id: source_id.clone(),
        structure: if rec.structure.is_empty() {
            sections
        } else {
            rec.structure
        },
        style_notes: rec.style_notes,
        specialty: rec.specialty,
    };
    audit.push(AuditRecord::new(
        Stage::MetaDerive,
        &source_id,
        &source_note,
        &meta,
    ));

    let texts = meta
        .structure
        .iter()
        .map(String::as_str)
        .chain([meta.style_notes.as_str(), meta.specialty.as_str()]);
    if let Err(rule) = phi.screen_all(texts) {
        ctx.quarantine(&meta)?;
        audit.push(
            AuditRecord::new(Stage::PhiScreen, &source_id, &meta, &rule.as_str())
                .discard(format!("PHI filter: {}", rule.as_str())),
        );
        return Err(SynthError::PhiFilterRejection {
            what: format!("meta-description {source_id}"),
            rule: rule.as_str(),
        });
    }
    audit.push(AuditRecord::new(
        Stage::PhiScreen,
        &source_id,
        &meta,
        &"pass",
    ));
    Ok(meta)
}

/// Structure templates used when no secure source notes are supplied.
pub fn builtin_metas() -> Vec<MetaDescription> {
    let mk = |id: &str, structure: &[&str], style: &str, specialty: &str| MetaDescription {
        source_id: id.to_string(),
        structure: structure.iter().map(|s| s.to_string()).collect(),
        style_notes: style.to_string(),
        specialty: specialty.to_string(),
    };
    vec![
        mk(
            "builtin-1",
            &["HPI", "Assessment", "Plan"],
            "Brief problem-oriented follow-up note.",
            "internal medicine",
        ),
        mk(
            "builtin-2",
            &["Chief Complaint", "History", "Assessment", "Plan"],
            "Narrative history followed by a numbered problem list.",
            "geriatrics",
        ),
        mk(
            "builtin-3",
            &["Subjective", "Objective", "Assessment", "Plan"],
            "SOAP format with terse clinical phrasing.",
            "family medicine",
        ),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{tag_marker, GatewayConfig, MockProvider, SchemaId, ScriptEntry};
    use serde_json::json;
    use std::sync::Arc;

    const NOTE: &str =
        "HPI: 80 year old seen for weakness.\nAssessment: frailty.\nPlan: PT referral.";

    fn secure_dir() -> tempfile::TempDir {
        let d = tempfile::tempdir().unwrap();
        std::fs::write(d.path().join(SECURE_MARKER), "").unwrap();
        d
    }

    #[test]
    fn sections_in_order() {
        assert_eq!(extract_sections(NOTE), vec!["HPI", "Assessment", "Plan"]);
        assert!(extract_sections("BP: 120/80").contains(&"BP".to_string()));
        assert!(extract_sections("this is a long sentence with a colon: here").is_empty());
    }

    #[test]
    fn requires_marker() {
        let d = tempfile::tempdir().unwrap();
        assert!(matches!(
            SecureContext::open(d.path()),
            Err(SynthError::NotSecure(_))
        ));
    }

    #[test]
    fn derive_meta_structure_and_distinct_ids() {
        let d = secure_dir();
        let ctx = SecureContext::open(d.path()).unwrap();
        let gw = Gateway::new(Arc::new(MockProvider::new()), GatewayConfig::default());
        let phi = PhiFilter::bundled();
        let mut audit = Vec::new();
        let a = derive_meta(NOTE, &ctx, &gw, &phi, 1, &mut audit).unwrap();
        assert_eq!(a.structure, vec!["HPI", "Assessment", "Plan"]);
        let b = derive_meta(
            "Subjective: cough.\nPlan: rest.",
            &ctx,
            &gw,
            &phi,
            1,
            &mut audit,
        )
        .unwrap();
        assert_ne!(a.source_id, b.source_id);
        assert!(audit.iter().any(|r| r.stage == Stage::PhiScreen));
    }

    #[test]
    fn phone_number_in_meta_is_quarantined() {
        let d = secure_dir();
        let ctx = SecureContext::open(d.path()).unwrap();
        let p = MockProvider::new().with_script_entry(ScriptEntry {
            schema_id: SchemaId::MetaDescription,
            tag: prompts::TAG_META.into(),
            response: json!({"structure": ["HPI"], "style_notes": "callback 5558675309", "specialty": "x"}),
        });
        assert!(tag_marker(prompts::TAG_META).contains("meta"));
        let gw = Gateway::new(Arc::new(p), GatewayConfig::default());
        let mut audit = Vec::new();
        let err = derive_meta(NOTE, &ctx, &gw, &PhiFilter::bundled(), 1, &mut audit).unwrap_err();
        assert!(matches!(err, SynthError::PhiFilterRejection { .. }));
        assert_eq!(std::fs::read_dir(ctx.quarantine_dir()).unwrap().count(), 1);
        assert!(audit.last().unwrap().discarded);
    }
}
