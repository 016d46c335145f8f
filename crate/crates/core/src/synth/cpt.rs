use std::collections::BTreeSet;
use std::ops::RangeInclusive;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use super::phi::PhiFilter;
use super::{
    hash_json, prompts, AuditRecord, ClinicalChart, CodeAssignment, MetaDescription, Provenance,
    ScoredCode, Stage, SynthError, DEFAULT_CREATED_AT, PIPELINE_VERSION,
};
use crate::embedding::{embed, fallback_expand, CodeIndex, EmbeddingError, EmbeddingProvider};
use crate::gateway::{Gateway, Payload};
use crate::seeds::derive_seed;
use crate::taxonomy::{parse_cpt, CodeCatalog, CodeSystem};

#[derive(Debug, Clone)]
pub struct CptGenConfig {
    /// Additional same-specialty procedures documented alongside the seed.
    pub extra_codes: RangeInclusive<usize>,
    pub created_at: String,
    pub phi: PhiFilter,
}

impl Default for CptGenConfig {
    fn default() -> Self {
        Self {
            extra_codes: 0..=1,
            created_at: DEFAULT_CREATED_AT.into(),
            phi: PhiFilter::bundled(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CptLabelConfig {
    pub n: usize,
    pub max_n: usize,
    /// A retrieved candidate is acceptable when its cosine score reaches this.
    pub min_similarity: f64,
    pub seed: u64,
}

impl Default for CptLabelConfig {
    fn default() -> Self {
        Self {
            n: 5,
            max_n: 40,
            min_similarity: 0.30,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CptLabelOutcome {
    Labeled(Vec<CodeAssignment>),
    Discard { reason: String },
}

fn cpt_meta(specialty: &str) -> MetaDescription {
    MetaDescription {
        source_id: "builtin-procedure".into(),
        structure: vec!["Indication".into(), "Procedure".into(), "Plan".into()],
        style_notes: "Procedure note with indication, procedures performed and disposition.".into(),
        specialty: specialty.into(),
    }
}

pub fn cpt_chart_id(ordinal: usize, specialty: &str, seed: u64, catalog: &CodeCatalog) -> String {
    let h = hash_json(&("cpt", specialty, seed, &catalog.version));
    format!("cpt-{ordinal:05}-{}", &h[..10])
}

pub fn generate_cpt_note(
    catalog: &CodeCatalog,
    specialty: &str,
    gateway: &Gateway,
    seed: u64,
    ordinal: usize,
    config: &CptGenConfig,
    audit: &mut Vec<AuditRecord>,
) -> Result<ClinicalChart, SynthError> {
    if catalog.system != CodeSystem::Cpt {
        return Err(SynthError::WrongSystem {
            expected: CodeSystem::Cpt,
            found: catalog.system,
        });
    }
    let range = catalog
        .specialty(specialty)
        .ok_or_else(|| SynthError::UnknownSpecialty(specialty.to_string()))?;
    let pool: Vec<String> = catalog
        .codes_in(range)
        .into_iter()
        .map(str::to_string)
        .collect();
    if pool.is_empty() {
        return Err(SynthError::EmptyPool(range.label.clone()));
    }
    let chart_id = cpt_chart_id(ordinal, &range.label, seed, catalog);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let seed_code = pool[rng.random_range(0..pool.len())].clone();
    audit.push(AuditRecord::new(
        Stage::SeedSample,
        &chart_id,
        &(&range.label, &pool),
        &seed_code,
    ));

    let (lo, hi) = (*config.extra_codes.start(), *config.extra_codes.end());
    let count = if hi >= lo {
        rng.random_range(lo..=hi)
    } else {
        0
    }
    .min(pool.len() - 1);
    let mut target_codes = vec![seed_code.clone()];
    if count > 0 {
        let others: Vec<String> = pool.iter().filter(|c| **c != seed_code).cloned().collect();
        let desc = catalog.describe(&seed_code).unwrap_or_default();
        let req = prompts::cpt_extra(
            &seed_code,
            desc,
            count,
            &others,
            derive_seed(seed, "extra", 0),
        );
        let out = gateway.chat(&req)?;
        let Payload::CodeSelection(sel) = out.payload else {
            unreachable!("validated as CODE_SELECTION")
        };
        for code in &sel.codes {
            match parse_cpt(code)
                .ok()
                .filter(|c| others.iter().any(|o| o == c.as_str()))
            {
                Some(c) if !target_codes.iter().any(|t| t == c.as_str()) => {
                    target_codes.push(c.as_str().to_string())
                }
                Some(_) => {}
                None => audit.push(
                    AuditRecord::new(Stage::CoOccurring, &chart_id, &seed_code, code)
                        .with_reason(format!("invalid co-occurring code: {code}")),
                ),
            }
        }
        audit.push(AuditRecord::new(
            Stage::CoOccurring,
            &chart_id,
            &req.user_prompt,
            &target_codes,
        ));
    }

    let meta = cpt_meta(&range.label);
    let described: Vec<(String, String)> = target_codes
        .iter()
        .map(|c| {
            (
                c.clone(),
                catalog.describe(c).unwrap_or_default().to_string(),
            )
        })
        .collect();
    let req = prompts::note(
        prompts::TAG_CPT_NOTE,
        "cpt",
        &meta,
        &described,
        derive_seed(seed, "note", 0),
    );
    let out = gateway.chat(&req)?;
    let Payload::NoteText(note) = out.payload else {
        unreachable!("validated as NOTE_TEXT")
    };
    let lines: Vec<String> = note
        .lines
        .into_iter()
        .map(|l| l.trim().to_string())
        .filter(|l| !l.is_empty())
        .collect();
    audit.push(AuditRecord::new(
        Stage::NoteGenerate,
        &chart_id,
        &req.user_prompt,
        &lines,
    ));
    if lines.is_empty() {
        return Err(SynthError::EmptyNote(chart_id));
    }
    if let Err(rule) = config.phi.screen_all(lines.iter().map(String::as_str)) {
        audit.push(
            AuditRecord::new(Stage::PhiScreen, &chart_id, &lines, &rule.as_str())
                .discard(format!("PHI filter: {}", rule.as_str())),
        );
        return Err(SynthError::PhiFilterRejection {
            what: format!("chart {chart_id}"),
            rule: rule.as_str(),
        });
    }
    audit.push(AuditRecord::new(
        Stage::PhiScreen,
        &chart_id,
        &lines,
        &"pass",
    ));

    Ok(ClinicalChart {
        chart_id,
        lines,
        seed_code,
        target_codes,
        domain_tags: BTreeSet::new(),
        provenance: Provenance {
            meta_source_id: meta.source_id,
            generator_provider_id: gateway.provider_id(),
            created_at: config.created_at.clone(),
            pipeline_version: PIPELINE_VERSION.into(),
        },
    })
}

pub fn label_cpt_note(
    chart: &ClinicalChart,
    index: &CodeIndex,
    embedder: &dyn EmbeddingProvider,
    gateway: &Gateway,
    config: &CptLabelConfig,
    audit: &mut Vec<AuditRecord>,
) -> Result<CptLabelOutcome, SynthError> {
    if index.system != CodeSystem::Cpt {
        return Err(SynthError::WrongSystem {
            expected: CodeSystem::Cpt,
            found: index.system,
        });
    }
    index.check_provider(embedder)?;
    let id = chart.chart_id.as_str();
    let chart_seed = derive_seed(config.seed, id, 0);
    let finish = |audit: &mut Vec<AuditRecord>, reason: &str| {
        audit.push(AuditRecord::new(Stage::Labeled, id, &chart.lines, &reason).discard(reason));
        Ok(CptLabelOutcome::Discard {
            reason: reason.to_string(),
        })
    };

    let req = prompts::cpt_describe(&chart.lines, derive_seed(chart_seed, "describe", 0));
    let out = gateway.chat(&req)?;
    let Payload::DescriptionList(list) = out.payload else {
        unreachable!("validated as DESCRIPTION_LIST")
    };
    audit.push(AuditRecord::new(
        Stage::Describe,
        id,
        &req.user_prompt,
        &list.descriptions,
    ));

    let mut groups: Vec<(String, Vec<(String, String, f64)>)> = Vec::new();
    for desc in &list.descriptions {
        let query = match embed(embedder, desc) {
            Ok(q) => q,
            Err(EmbeddingError::EmptyText) => continue,
            Err(e) => return Err(e.into()),
        };
        let res = fallback_expand(index, &query, config.n, config.max_n, |c| {
            c.score >= config.min_similarity
        })?;
        let scored: Vec<ScoredCode> = res
            .candidates
            .iter()
            .map(|c| ScoredCode {
                code: c.code.clone(),
                score: c.score,
            })
            .collect();
        let mut rec = AuditRecord::new(Stage::Resolve, id, desc, &scored).with_candidates(scored);
        if res.candidates.is_empty() {
            rec = rec.with_reason("description unresolved");
        } else if res.expanded {
            rec = rec.with_reason(format!("resolved after expanding past top-{}", config.n));
        }
        audit.push(rec);
        if !res.candidates.is_empty() {
            let cands = res
                .candidates
                .iter()
                .map(|c| {
                    (
                        c.code.clone(),
                        index.description(&c.code).unwrap_or_default().to_string(),
                        c.score,
                    )
                })
                .collect();
            groups.push((desc.clone(), cands));
        }
    }
    if groups.is_empty() {
        return finish(audit, "no valid CPT code could be resolved");
    }

    let allowed: BTreeSet<&str> = groups
        .iter()
        .flat_map(|(_, c)| c.iter().map(|(code, _, _)| code.as_str()))
        .collect();
    let mut rejected: Vec<String> = Vec::new();
    for round in 0..2u64 {
        let req = prompts::cpt_select(&groups, &rejected, derive_seed(chart_seed, "select", round));
        let out = gateway.chat(&req)?;
        let Payload::CodeSelection(sel) = out.payload else {
            unreachable!("validated as CODE_SELECTION")
        };
        let outside: Vec<String> = sel
            .codes
            .iter()
            .filter(|c| !allowed.contains(c.trim()))
            .cloned()
            .collect();
        let mut rec = AuditRecord::new(Stage::Select, id, &req.user_prompt, &sel.codes);
        if !outside.is_empty() {
            rec = rec.with_reason(format!(
                "selection outside candidates: {}",
                outside.join(", ")
            ));
            audit.push(rec);
            rejected = outside;
            continue;
        }
        audit.push(rec);
        let mut chosen: Vec<CodeAssignment> = Vec::new();
        for code in sel.codes.iter().map(|c| c.trim()) {
            if chosen.iter().any(|a| a.code == code) {
                continue;
            }
            let (desc, _) = groups
                .iter()
                .find(|(_, c)| c.iter().any(|(x, _, _)| x == code))
                .expect("code is allowed");
            chosen.push(CodeAssignment {
                code: code.to_string(),
                rationale: format!("Resolved from procedure description: {desc}"),
                evidence_lines: BTreeSet::new(),
                source: Default::default(),
            });
        }
        if chosen.is_empty() {
            return finish(audit, "empty code selection");
        }
        let summary = json!(chosen.iter().map(|a| &a.code).collect::<Vec<_>>());
        audit.push(AuditRecord::new(Stage::Labeled, id, &chart.lines, &summary));
        return Ok(CptLabelOutcome::Labeled(chosen));
    }
    finish(audit, "selection outside candidates after re-ask")
}
