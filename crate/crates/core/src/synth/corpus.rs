//! Corpus-level orchestration: plan, run in parallel chunks, write in order.
//!
//! Output files are appended chunk by chunk in plan order. A unit is complete
//! once its terminal audit record (`generated` or `labeled`) is on disk; on
//! restart everything belonging to incomplete units is trimmed and redone.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::cpt::cpt_chart_id;
use super::icd::icd_chart_id;
use super::{
    builtin_metas, derive_meta, generate_cpt_note, generate_icd_chart, label_cpt_note,
    label_icd_chart, AuditRecord, ClinicalChart, CptGenConfig, CptLabelConfig, CptLabelOutcome,
    IcdGenConfig, IcdLabelConfig, LabelRecord, MetaDescription, ReviewItem, SecureContext, Stage,
    SynthError,
};
use crate::embedding::{CodeIndex, EmbeddingProvider};
use crate::gateway::{Gateway, GatewayError};
use crate::jsonl::{
    append_jsonl, read_jsonl, read_jsonl_lenient, read_lines_lenient, write_jsonl, write_lines,
    JsonlError,
};
use crate::seeds::derive_seed;
use crate::taxonomy::{CodeCatalog, Domain, DomainSets};

pub const CHARTS_FILE: &str = "charts.jsonl";
pub const GENERATED_FILE: &str = "charts.generated.jsonl";
pub const GOLD_FILE: &str = "gold.jsonl";
pub const AUDIT_FILE: &str = "audit.jsonl";
pub const REVIEW_QUEUE_FILE: &str = "review_queue.jsonl";
pub const GATEWAY_AUDIT_FILE: &str = "gateway_audit.jsonl";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.json";

const CHUNK: usize = 16;
/// Shingle length for the verbatim-overlap screen against source notes.
const SHINGLE_TOKENS: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusKind {
    Icd,
    Cpt,
}

#[derive(Debug, Clone)]
pub struct CorpusConfig {
    pub kind: CorpusKind,
    pub out_dir: PathBuf,
    pub root_seed: u64,
    /// Charts per domain (ICD) in plan order.
    pub icd_plan: Vec<(Domain, usize)>,
    /// Charts per specialty (CPT) in plan order.
    pub cpt_plan: Vec<(String, usize)>,
    /// Secure directory of source notes for meta-descriptions; built-in
    /// structure templates are used when absent.
    pub secure_dir: Option<PathBuf>,
    pub icd_gen: IcdGenConfig,
    pub cpt_gen: CptGenConfig,
    pub icd_label: IcdLabelConfig,
    pub cpt_label: CptLabelConfig,
}

impl CorpusConfig {
    pub fn new(kind: CorpusKind, out_dir: impl Into<PathBuf>, root_seed: u64) -> Self {
        Self {
            kind,
            out_dir: out_dir.into(),
            root_seed,
            icd_plan: Vec::new(),
            cpt_plan: Vec::new(),
            secure_dir: None,
            icd_gen: IcdGenConfig::default(),
            cpt_gen: CptGenConfig::default(),
            icd_label: IcdLabelConfig {
                seed: root_seed,
                ..Default::default()
            },
            cpt_label: CptLabelConfig {
                seed: root_seed,
                ..Default::default()
            },
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub attempted: usize,
    pub retained: usize,
    pub discarded: usize,
    pub discard_rate: f64,
    pub discard_reasons: BTreeMap<String, usize>,
    pub code_frequency: BTreeMap<String, usize>,
    /// Number of labels → number of documents with that many.
    pub labels_per_document: BTreeMap<usize, usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub review_queue: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generation: Option<StepDiagnostics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labeling: Option<StepDiagnostics>,
}

impl From<JsonlError> for SynthError {
    fn from(e: JsonlError) -> Self {
        match e {
            JsonlError::Io { path, source } => SynthError::Io {
                path: path.into(),
                source,
            },
            JsonlError::Parse {
                path,
                line,
                message,
            } => SynthError::Json {
                path: path.into(),
                line,
                message,
            },
        }
    }
}

pub fn read_charts(path: &Path) -> Result<Vec<ClinicalChart>, SynthError> {
    Ok(read_jsonl(path)?)
}

pub fn read_gold(path: &Path) -> Result<Vec<LabelRecord>, SynthError> {
    Ok(read_jsonl(path)?)
}

/// Errors that end a single unit rather than the whole run.
fn unit_failure(e: &SynthError) -> Option<&'static str> {
    match e {
        SynthError::PhiFilterRejection { .. } => Some("PHI filter"),
        SynthError::EmptyNote(_) => Some("empty note"),
        SynthError::Gateway(GatewayError::SchemaViolation { .. }) => Some("schema violation"),
        SynthError::Gateway(GatewayError::ProviderRejected(_)) => Some("provider rejected request"),
        _ => None,
    }
}

fn reason_key(reason: &str) -> String {
    reason
        .split(':')
        .next()
        .unwrap_or(reason)
        .trim()
        .to_string()
}

fn load_diagnostics(path: &Path) -> Diagnostics {
    std::fs::read_to_string(path)
        .ok()
        .and_then(|t| serde_json::from_str(&t).ok())
        .unwrap_or_default()
}

fn save_diagnostics(path: &Path, d: &Diagnostics) -> Result<(), SynthError> {
    let text = serde_json::to_string_pretty(d).expect("diagnostics serialize") + "\n";
    std::fs::write(path, text).map_err(SynthError::io(path))
}

fn shingles(text: &str) -> HashSet<Vec<String>> {
    let toks: Vec<String> = crate::text::word_tokens(text).collect();
    toks.windows(SHINGLE_TOKENS).map(|w| w.to_vec()).collect()
}

/// Drops records of incomplete units, keeping the surviving lines byte for
/// byte. Returns the ids of complete units.
fn trim_for_resume(
    cfg: &CorpusConfig,
    terminal: Stage,
    in_step: impl Fn(&AuditRecord) -> bool,
    outputs: &[&str],
) -> Result<HashSet<String>, SynthError> {
    let audit_path = cfg.path(AUDIT_FILE);
    let lines = read_lines_lenient(&audit_path)?;
    let records: Vec<AuditRecord> = lines
        .iter()
        .map(|l| serde_json::from_str(l))
        .collect::<Result<_, _>>()
        .map_err(|e| SynthError::Json {
            path: audit_path.clone(),
            line: 0,
            message: e.to_string(),
        })?;
    let done: HashSet<String> = records
        .iter()
        .filter(|r| r.stage == terminal)
        .map(|r| r.chart_id.clone())
        .collect();
    if audit_path.exists() {
        let kept: Vec<&str> = lines
            .iter()
            .zip(&records)
            .filter(|(_, r)| !in_step(r) || done.contains(&r.chart_id))
            .map(|(l, _)| l.as_str())
            .collect();
        write_lines(&audit_path, &kept)?;
    }
    for name in outputs {
        let p = cfg.path(name);
        if p.exists() {
            let rows = read_lines_lenient(&p)?;
            let kept: Vec<&str> = rows
                .iter()
                .filter(|l| chart_id_of(l).is_some_and(|id| done.contains(&id)))
                .map(String::as_str)
                .collect();
            write_lines(&p, &kept)?;
        }
    }
    Ok(done)
}

fn chart_id_of(line: &str) -> Option<String> {
    let v: serde_json::Value = serde_json::from_str(line).ok()?;
    v.get("chart_id")
        .and_then(|c| c.as_str())
        .map(str::to_string)
}

fn flush_gateway_audit(cfg: &CorpusConfig, gateway: &Gateway) -> Result<(), SynthError> {
    let mut entries = gateway.drain_audit();
    entries.sort_by(|a, b| (&a.request_hash, a.attempt).cmp(&(&b.request_hash, b.attempt)));
    Ok(append_jsonl(&cfg.path(GATEWAY_AUDIT_FILE), &entries)?)
}

enum Target {
    Domain(Domain),
    Specialty(String),
}

/// Round-robin interleaving of the per-target counts.
fn plan(cfg: &CorpusConfig) -> Vec<Target> {
    let mut remaining: Vec<(Target, usize)> = match cfg.kind {
        CorpusKind::Icd => cfg
            .icd_plan
            .iter()
            .map(|(d, n)| (Target::Domain(*d), *n))
            .collect(),
        CorpusKind::Cpt => cfg
            .cpt_plan
            .iter()
            .map(|(s, n)| (Target::Specialty(s.clone()), *n))
            .collect(),
    };
    let mut out = Vec::new();
    while remaining.iter().any(|(_, n)| *n > 0) {
        for (t, n) in remaining.iter_mut().filter(|(_, n)| *n > 0) {
            *n -= 1;
            out.push(match t {
                Target::Domain(d) => Target::Domain(*d),
                Target::Specialty(s) => Target::Specialty(s.clone()),
            });
        }
    }
    out
}

/// Generation step: writes `charts.jsonl`, appends to `audit.jsonl`, and
/// records generation diagnostics.
pub fn generate_corpus(
    cfg: &CorpusConfig,
    catalog: &CodeCatalog,
    domains: &DomainSets,
    gateway: &Gateway,
) -> Result<StepDiagnostics, SynthError> {
    std::fs::create_dir_all(&cfg.out_dir).map_err(SynthError::io(&cfg.out_dir))?;
    let units = plan(cfg);
    if units.is_empty() {
        return Err(SynthError::Config(
            "nothing to generate: plan is empty".into(),
        ));
    }
    if let CorpusKind::Cpt = cfg.kind {
        for (s, _) in &cfg.cpt_plan {
            catalog
                .specialty(s)
                .ok_or_else(|| SynthError::UnknownSpecialty(s.clone()))?;
        }
    }

    let is_unit =
        |r: &AuditRecord| r.chart_id.starts_with("icd-") || r.chart_id.starts_with("cpt-");
    let done = trim_for_resume(
        cfg,
        Stage::Generated,
        |r| is_unit(r) && !r.stage.is_labeling(),
        &[CHARTS_FILE],
    )?;
    let existing: Vec<AuditRecord> = read_jsonl_lenient(&cfg.path(AUDIT_FILE))?;

    // Meta-descriptions and the source text they were derived from.
    let mut source_shingles: HashSet<Vec<String>> = HashSet::new();
    let metas: Vec<MetaDescription> = match (&cfg.kind, &cfg.secure_dir) {
        (CorpusKind::Icd, Some(dir)) => {
            let ctx = SecureContext::open(dir)?;
            let mut metas = Vec::new();
            let mut meta_audit = Vec::new();
            for (i, (_, note)) in ctx.source_notes()?.iter().enumerate() {
                source_shingles.extend(shingles(note));
                match derive_meta(
                    note,
                    &ctx,
                    gateway,
                    &cfg.icd_gen.phi,
                    derive_seed(cfg.root_seed, "meta", i as u64),
                    &mut meta_audit,
                ) {
                    Ok(m) => metas.push(m),
                    Err(SynthError::PhiFilterRejection { .. }) => {}
                    Err(e) => return Err(e),
                }
            }
            let seen: HashSet<&str> = existing
                .iter()
                .filter(|r| r.stage == Stage::MetaDerive)
                .map(|r| r.chart_id.as_str())
                .collect();
            let fresh: Vec<&AuditRecord> = meta_audit
                .iter()
                .filter(|r| !seen.contains(r.chart_id.as_str()))
                .collect();
            append_jsonl(&cfg.path(AUDIT_FILE), &fresh)?;
            if metas.is_empty() {
                return Err(SynthError::Config(format!(
                    "no usable source notes in {}",
                    dir.display()
                )));
            }
            metas
        }
        _ => builtin_metas(),
    };

    let ids: Vec<String> = units
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let seed = derive_seed(cfg.root_seed, "chart", i as u64);
            match t {
                Target::Domain(d) => icd_chart_id(i, &metas[i % metas.len()], *d, seed, catalog),
                Target::Specialty(s) => {
                    let label = catalog.specialty(s).map(|r| r.label.as_str()).unwrap_or(s);
                    cpt_chart_id(i, label, seed, catalog)
                }
            }
        })
        .collect();

    let todo: Vec<usize> = (0..units.len())
        .filter(|i| !done.contains(&ids[*i]))
        .collect();
    for chunk in todo.chunks(CHUNK) {
        let results: Vec<Result<(Option<ClinicalChart>, Vec<AuditRecord>), SynthError>> = chunk
            .par_iter()
            .map(|&i| {
                let seed = derive_seed(cfg.root_seed, "chart", i as u64);
                let mut audit = Vec::new();
                let result = match &units[i] {
                    Target::Domain(d) => generate_icd_chart(
                        &metas[i % metas.len()], catalog, domains, gateway, seed, *d, i, &cfg.icd_gen, &mut audit,
                    ),
                    Target::Specialty(s) => generate_cpt_note(catalog, s, gateway, seed, i, &cfg.cpt_gen, &mut audit),
                };
                let id = &ids[i];
                match result {
                    Ok(chart) => {
                        let overlap = shingles(&chart.lines.join("\n")).iter().any(|s| source_shingles.contains(s));
                        if overlap {
                            let reason = format!("verbatim overlap: {SHINGLE_TOKENS}-token shingle shared with a source note");
                            audit.push(AuditRecord::new(Stage::SourceOverlap, id, &chart.lines, &"overlap").discard(reason.clone()));
                            audit.push(AuditRecord::new(Stage::Generated, id, &chart.lines, &"").discard(reason));
                            return Ok((None, audit));
                        }
                        audit.push(AuditRecord::new(Stage::SourceOverlap, id, &chart.lines, &"pass"));
                        audit.push(AuditRecord::new(Stage::Generated, id, &chart.lines, &chart));
                        Ok((Some(chart), audit))
                    }
                    Err(e) => match unit_failure(&e) {
                        Some(key) => {
                            audit.push(AuditRecord::new(Stage::Generated, id, &i, &"").discard(format!("{key}: {e}")));
                            Ok((None, audit))
                        }
                        None => Err(e),
                    },
                }
            })
            .collect();
        let mut charts = Vec::new();
        let mut audit = Vec::new();
        for r in results {
            let (chart, records) = r?;
            charts.extend(chart);
            audit.extend(records);
        }
        append_jsonl(&cfg.path(CHARTS_FILE), &charts)?;
        append_jsonl(&cfg.path(AUDIT_FILE), &audit)?;
        flush_gateway_audit(cfg, gateway)?;
    }

    let records: Vec<AuditRecord> = read_jsonl(&cfg.path(AUDIT_FILE))?;
    let charts = read_charts(&cfg.path(CHARTS_FILE))?;
    let mut diag = StepDiagnostics {
        attempted: units.len(),
        retained: charts.len(),
        ..Default::default()
    };
    for r in records
        .iter()
        .filter(|r| r.stage == Stage::Generated && r.discarded)
    {
        *diag
            .discard_reasons
            .entry(reason_key(r.reason.as_deref().unwrap_or("unknown")))
            .or_default() += 1;
    }
    for c in &charts {
        for code in &c.target_codes {
            *diag.code_frequency.entry(code.clone()).or_default() += 1;
        }
        *diag
            .labels_per_document
            .entry(c.target_codes.len())
            .or_default() += 1;
    }
    diag.discarded = diag.attempted - diag.retained;
    diag.discard_rate = diag.discarded as f64 / diag.attempted as f64;

    let dpath = cfg.path(DIAGNOSTICS_FILE);
    let mut all = load_diagnostics(&dpath);
    all.generation = Some(diag.clone());
    save_diagnostics(&dpath, &all)?;
    Ok(diag)
}

/// Labeling step: writes `gold.jsonl` and `review_queue.jsonl`. For CPT the
/// generated notes are kept in `charts.generated.jsonl` and `charts.jsonl`
/// is rewritten without discarded notes.
pub fn label_corpus(
    cfg: &CorpusConfig,
    catalog: &CodeCatalog,
    index: &CodeIndex,
    embedder: &dyn EmbeddingProvider,
    gateway: &Gateway,
) -> Result<StepDiagnostics, SynthError> {
    if index.catalog_version != catalog.version {
        return Err(SynthError::Config(format!(
            "index built from catalog version {}, pipeline pinned to {}",
            index.catalog_version, catalog.version
        )));
    }
    index.check_provider(embedder)?;
    let source = match cfg.kind {
        CorpusKind::Icd => cfg.path(CHARTS_FILE),
        CorpusKind::Cpt => {
            let generated = cfg.path(GENERATED_FILE);
            if !generated.exists() {
                std::fs::copy(cfg.path(CHARTS_FILE), &generated)
                    .map_err(SynthError::io(&generated))?;
            }
            generated
        }
    };
    let charts = read_charts(&source)?;
    let done = trim_for_resume(
        cfg,
        Stage::Labeled,
        |r| r.stage.is_labeling(),
        &[GOLD_FILE, REVIEW_QUEUE_FILE],
    )?;

    let todo: Vec<&ClinicalChart> = charts
        .iter()
        .filter(|c| !done.contains(&c.chart_id))
        .collect();
    type Labeled = (Option<LabelRecord>, Vec<ReviewItem>, Vec<AuditRecord>);
    for chunk in todo.chunks(CHUNK) {
        let results: Vec<Result<Labeled, SynthError>> = chunk
            .par_iter()
            .map(|chart| {
                let mut audit = Vec::new();
                match cfg.kind {
                    CorpusKind::Icd => {
                        let out = label_icd_chart(
                            chart,
                            index,
                            embedder,
                            gateway,
                            &cfg.icd_label,
                            &mut audit,
                        );
                        match out {
                            Ok(o) => Ok((
                                Some(LabelRecord {
                                    chart_id: chart.chart_id.clone(),
                                    assignments: o.assignments,
                                }),
                                o.review,
                                audit,
                            )),
                            Err(e) => match unit_failure(&e) {
                                Some(key) => {
                                    audit.push(
                                        AuditRecord::new(
                                            Stage::Labeled,
                                            &chart.chart_id,
                                            &chart.lines,
                                            &"",
                                        )
                                        .discard(format!("{key}: {e}")),
                                    );
                                    Ok((None, Vec::new(), audit))
                                }
                                None => Err(e),
                            },
                        }
                    }
                    CorpusKind::Cpt => {
                        match label_cpt_note(
                            chart,
                            index,
                            embedder,
                            gateway,
                            &cfg.cpt_label,
                            &mut audit,
                        ) {
                            Ok(CptLabelOutcome::Labeled(a)) => Ok((
                                Some(LabelRecord {
                                    chart_id: chart.chart_id.clone(),
                                    assignments: a,
                                }),
                                Vec::new(),
                                audit,
                            )),
                            Ok(CptLabelOutcome::Discard { .. }) => Ok((None, Vec::new(), audit)),
                            Err(e) => match unit_failure(&e) {
                                Some(key) => {
                                    audit.push(
                                        AuditRecord::new(
                                            Stage::Labeled,
                                            &chart.chart_id,
                                            &chart.lines,
                                            &"",
                                        )
                                        .discard(format!("{key}: {e}")),
                                    );
                                    Ok((None, Vec::new(), audit))
                                }
                                None => Err(e),
                            },
                        }
                    }
                }
            })
            .collect();
        let (mut gold, mut review, mut audit) = (Vec::new(), Vec::new(), Vec::new());
        for r in results {
            let (g, rv, a) = r?;
            gold.extend(g);
            review.extend(rv);
            audit.extend(a);
        }
        append_jsonl(&cfg.path(GOLD_FILE), &gold)?;
        append_jsonl(&cfg.path(REVIEW_QUEUE_FILE), &review)?;
        append_jsonl(&cfg.path(AUDIT_FILE), &audit)?;
        flush_gateway_audit(cfg, gateway)?;
    }
    if !cfg.path(REVIEW_QUEUE_FILE).exists() {
        write_jsonl::<ReviewItem>(&cfg.path(REVIEW_QUEUE_FILE), &[])?;
    }

    let gold = read_gold(&cfg.path(GOLD_FILE)).or_else(|e| match e {
        SynthError::Io { .. } => Ok(Vec::new()),
        other => Err(other),
    })?;
    if cfg.kind == CorpusKind::Cpt {
        let kept: BTreeSet<&str> = gold.iter().map(|g| g.chart_id.as_str()).collect();
        let retained: Vec<&ClinicalChart> = charts
            .iter()
            .filter(|c| kept.contains(c.chart_id.as_str()))
            .collect();
        write_jsonl(&cfg.path(CHARTS_FILE), &retained)?;
    }
    verify_labels(&charts, &gold, catalog)?;

    let records: Vec<AuditRecord> = read_jsonl(&cfg.path(AUDIT_FILE))?;
    let review: Vec<ReviewItem> = read_jsonl(&cfg.path(REVIEW_QUEUE_FILE))?;
    let mut diag = StepDiagnostics {
        attempted: charts.len(),
        retained: gold.len(),
        review_queue: Some(review.len()),
        ..Default::default()
    };
    for r in records
        .iter()
        .filter(|r| r.stage == Stage::Labeled && r.discarded)
    {
        *diag
            .discard_reasons
            .entry(reason_key(r.reason.as_deref().unwrap_or("unknown")))
            .or_default() += 1;
    }
    for g in &gold {
        for a in &g.assignments {
            *diag.code_frequency.entry(a.code.clone()).or_default() += 1;
        }
        *diag
            .labels_per_document
            .entry(g.assignments.len())
            .or_default() += 1;
    }
    diag.discarded = diag.attempted - diag.retained;
    diag.discard_rate = if diag.attempted == 0 {
        0.0
    } else {
        diag.discarded as f64 / diag.attempted as f64
    };

    let dpath = cfg.path(DIAGNOSTICS_FILE);
    let mut all = load_diagnostics(&dpath);
    all.labeling = Some(diag.clone());
    save_diagnostics(&dpath, &all)?;
    Ok(diag)
}

/// Every gold code is in the catalog and every evidence index points into its chart.
pub fn verify_labels(
    charts: &[ClinicalChart],
    gold: &[LabelRecord],
    catalog: &CodeCatalog,
) -> Result<(), SynthError> {
    let lines: BTreeMap<&str, usize> = charts
        .iter()
        .map(|c| (c.chart_id.as_str(), c.lines.len()))
        .collect();
    for g in gold {
        let n = *lines.get(g.chart_id.as_str()).ok_or_else(|| {
            SynthError::Config(format!("gold record for unknown chart {}", g.chart_id))
        })?;
        for a in &g.assignments {
            if !catalog.contains(&a.code) {
                return Err(SynthError::Config(format!(
                    "{}: code {} not in catalog",
                    g.chart_id, a.code
                )));
            }
            if let Some(bad) = a.evidence_lines.iter().find(|&&i| i >= n) {
                return Err(SynthError::Config(format!(
                    "{}: evidence line {bad} out of range",
                    g.chart_id
                )));
            }
        }
    }
    Ok(())
}

/// Generation followed by labeling.
pub fn run_corpus(
    cfg: &CorpusConfig,
    catalog: &CodeCatalog,
    domains: &DomainSets,
    index: &CodeIndex,
    embedder: &dyn EmbeddingProvider,
    gateway: &Gateway,
) -> Result<Diagnostics, SynthError> {
    let generation = generate_corpus(cfg, catalog, domains, gateway)?;
    let labeling = label_corpus(cfg, catalog, index, embedder, gateway)?;
    Ok(Diagnostics {
        generation: Some(generation),
        labeling: Some(labeling),
    })
}
