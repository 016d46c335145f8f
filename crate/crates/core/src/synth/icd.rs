use std::collections::{BTreeMap, BTreeSet};
use std::ops::RangeInclusive;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::phi::PhiFilter;
use super::{
    hash_json, prompts, AuditRecord, ClinicalChart, CodeAssignment, MetaDescription, Provenance,
    ScoredCode, Stage, SynthError, DEFAULT_CREATED_AT, PIPELINE_VERSION,
};
use crate::embedding::{embed, query_top_n, CodeIndex, EmbeddingProvider};
use crate::gateway::{Gateway, Payload};
use crate::seeds::derive_seed;
use crate::taxonomy::{parse_icd, CodeCatalog, CodeSystem, Domain, DomainSets};

#[derive(Debug, Clone)]
pub struct IcdGenConfig {
    /// How many co-occurring codes to request per chart.
    pub co_occurring: RangeInclusive<usize>,
    pub created_at: String,
    pub phi: PhiFilter,
}

impl Default for IcdGenConfig {
    fn default() -> Self {
        Self {
            co_occurring: 1..=6,
            created_at: DEFAULT_CREATED_AT.into(),
            phi: PhiFilter::bundled(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct IcdLabelConfig {
    pub top_n: usize,
    pub window: usize,
    pub stride: usize,
    pub seed: u64,
}

impl Default for IcdLabelConfig {
    fn default() -> Self {
        Self {
            top_n: 10,
            window: 1,
            stride: 1,
            seed: 0,
        }
    }
}

/// A valid catalog code the labeler proposed outside its candidate list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewItem {
    pub chart_id: String,
    pub code: String,
    pub rationale: String,
    pub evidence_lines: BTreeSet<usize>,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IcdLabelOutcome {
    pub assignments: Vec<CodeAssignment>,
    pub review: Vec<ReviewItem>,
}

/// Seed-code pool for `domain`: catalog codes whose category belongs to it
/// (for `General`, to none of the targeted domains).
pub fn domain_pool(catalog: &CodeCatalog, domains: &DomainSets, domain: Domain) -> Vec<String> {
    catalog
        .entries()
        .filter(|(key, _)| domains.pool_domain(&key[..3]) == domain)
        .map(|(key, _)| catalog.display_code(key))
        .collect()
}

pub fn icd_chart_id(
    ordinal: usize,
    meta: &MetaDescription,
    domain: Domain,
    seed: u64,
    catalog: &CodeCatalog,
) -> String {
    let h = hash_json(&("icd", &meta.source_id, domain, seed, &catalog.version));
    format!("icd-{ordinal:05}-{}", &h[..10])
}

#[allow(clippy::too_many_arguments)]
pub fn generate_icd_chart(
    meta: &MetaDescription,
    catalog: &CodeCatalog,
    domains: &DomainSets,
    gateway: &Gateway,
    seed: u64,
    domain: Domain,
    ordinal: usize,
    config: &IcdGenConfig,
    audit: &mut Vec<AuditRecord>,
) -> Result<ClinicalChart, SynthError> {
    if catalog.system != CodeSystem::Icd10Cm {
        return Err(SynthError::WrongSystem {
            expected: CodeSystem::Icd10Cm,
            found: catalog.system,
        });
    }
    let chart_id = icd_chart_id(ordinal, meta, domain, seed, catalog);
    let pool = domain_pool(catalog, domains, domain);
    if pool.is_empty() {
        return Err(SynthError::EmptyPool(domain.to_string()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let seed_code = pool[rng.random_range(0..pool.len())].clone();
    audit.push(AuditRecord::new(
        Stage::SeedSample,
        &chart_id,
        &(domain, &pool),
        &seed_code,
    ));

    let (lo, hi) = (*config.co_occurring.start(), *config.co_occurring.end());
    let count = if hi >= lo {
        rng.random_range(lo..=hi)
    } else {
        0
    };
    let mut target_codes = vec![seed_code.clone()];
    if count > 0 {
        let candidates: Vec<String> = catalog
            .entries()
            .map(|(k, _)| catalog.display_code(k))
            .filter(|c| *c != seed_code)
            .collect();
        let seed_desc = catalog.describe(&seed_code).unwrap_or_default();
        let req = prompts::cooccurring(
            &seed_code,
            seed_desc,
            count,
            &candidates,
            derive_seed(seed, "cooccur", 0),
        );
        let out = gateway.chat(&req)?;
        let Payload::CodeSelection(sel) = out.payload else {
            unreachable!("validated as CODE_SELECTION")
        };
        for code in &sel.codes {
            let valid = parse_icd(code)
                .ok()
                .filter(|c| catalog.contains(c.normalized()));
            match valid {
                Some(c) => {
                    let display = catalog.display_code(c.normalized());
                    if !target_codes.contains(&display) {
                        target_codes.push(display);
                    }
                }
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
        prompts::TAG_ICD_NOTE,
        "icd",
        meta,
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

    let domain_tags = target_codes
        .iter()
        .map(|c| domains.pool_domain(&c[..3]))
        .collect();
    Ok(ClinicalChart {
        chart_id,
        lines,
        seed_code,
        target_codes,
        domain_tags,
        provenance: Provenance {
            meta_source_id: meta.source_id.clone(),
            generator_provider_id: gateway.provider_id(),
            created_at: config.created_at.clone(),
            pipeline_version: PIPELINE_VERSION.into(),
        },
    })
}

pub fn label_icd_chart(
    chart: &ClinicalChart,
    index: &CodeIndex,
    embedder: &dyn EmbeddingProvider,
    gateway: &Gateway,
    config: &IcdLabelConfig,
    audit: &mut Vec<AuditRecord>,
) -> Result<IcdLabelOutcome, SynthError> {
    if index.system != CodeSystem::Icd10Cm {
        return Err(SynthError::WrongSystem {
            expected: CodeSystem::Icd10Cm,
            found: index.system,
        });
    }
    index.check_provider(embedder)?;
    if config.window == 0 || config.stride == 0 {
        return Err(SynthError::Config(
            "window and stride must be positive".into(),
        ));
    }
    let by_norm: BTreeMap<String, &str> = index
        .items
        .iter()
        .filter_map(|it| {
            parse_icd(&it.code)
                .ok()
                .map(|c| (c.normalized().to_string(), it.code.as_str()))
        })
        .collect();
    let chart_seed = derive_seed(config.seed, &chart.chart_id, 0);

    let mut merged: Vec<CodeAssignment> = Vec::new();
    let mut review: Vec<ReviewItem> = Vec::new();
    let n = chart.lines.len();
    let mut start = 0;
    while start < n {
        let end = (start + config.window).min(n);
        let window: Vec<(usize, &str)> =
            (start..end).map(|i| (i, chart.lines[i].as_str())).collect();
        let text = window.iter().map(|(_, t)| *t).collect::<Vec<_>>().join(" ");
        let query = match embed(embedder, &text) {
            Ok(q) => q,
            Err(crate::embedding::EmbeddingError::EmptyText) => {
                audit.push(
                    AuditRecord::new(Stage::LabelWindow, &chart.chart_id, &text, &"")
                        .with_reason("empty window"),
                );
                start += config.stride;
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        let retrieved = query_top_n(index, &query, config.top_n)?;
        let candidates: Vec<(String, String)> = retrieved
            .candidates
            .iter()
            .map(|c| {
                (
                    c.code.clone(),
                    index.description(&c.code).unwrap_or_default().to_string(),
                )
            })
            .collect();
        let req = prompts::icd_label(
            &window,
            &candidates,
            derive_seed(chart_seed, "window", start as u64),
        );
        let out = gateway.chat(&req)?;
        let Payload::IcdAssignments(records) = out.payload else {
            unreachable!("validated as ICD_ASSIGNMENTS")
        };
        let scored = retrieved
            .candidates
            .iter()
            .map(|c| ScoredCode {
                code: c.code.clone(),
                score: c.score,
            })
            .collect();
        let mut record = AuditRecord::new(
            Stage::LabelWindow,
            &chart.chart_id,
            &req.user_prompt,
            &out.raw_text,
        )
        .with_candidates(scored);
        if records.is_empty() {
            record = record.with_reason("empty assignment list");
        }
        audit.push(record);

        let in_window = |i: &usize| (start..end).contains(i);
        for rec in records {
            let mut evidence: BTreeSet<usize> = rec
                .evidence
                .line_index
                .iter()
                .copied()
                .filter(in_window)
                .collect();
            if evidence.is_empty() {
                evidence = (start..end).collect();
            }
            let Ok(parsed) = parse_icd(&rec.code) else {
                audit.push(
                    AuditRecord::new(Stage::LabelWindow, &chart.chart_id, &rec.code, &"")
                        .with_reason(format!("malformed code: {}", rec.code)),
                );
                continue;
            };
            let is_candidate = candidates
                .iter()
                .any(|(c, _)| parse_icd(c).is_ok_and(|p| p.normalized() == parsed.normalized()));
            match by_norm.get(parsed.normalized()) {
                Some(display) if is_candidate => {
                    match merged.iter_mut().find(|a| a.code == *display) {
                        Some(a) => a.evidence_lines.extend(evidence),
                        None => merged.push(CodeAssignment {
                            code: display.to_string(),
                            rationale: rec.rationale,
                            evidence_lines: evidence,
                            source: Default::default(),
                        }),
                    }
                }
                Some(display) => {
                    audit.push(
                        AuditRecord::new(Stage::LabelWindow, &chart.chart_id, &rec.code, display)
                            .with_reason("suggested non-candidate code"),
                    );
                    review.push(ReviewItem {
                        chart_id: chart.chart_id.clone(),
                        code: display.to_string(),
                        rationale: rec.rationale,
                        evidence_lines: evidence,
                        reason: "suggested non-candidate code".into(),
                    });
                }
                None => audit.push(
                    AuditRecord::new(Stage::LabelWindow, &chart.chart_id, &rec.code, &"")
                        .with_reason(format!("code not in catalog: {}", rec.code)),
                ),
            }
        }
        start += config.stride;
    }
    let summary = json!({"assignments": merged.iter().map(|a| &a.code).collect::<Vec<_>>(), "review": review.len()});
    let mut done = AuditRecord::new(Stage::Labeled, &chart.chart_id, &chart.lines, &summary);
    if merged.is_empty() {
        done = done.with_reason("empty assignment list");
    }
    audit.push(done);
    Ok(IcdLabelOutcome {
        assignments: merged,
        review,
    })
}
