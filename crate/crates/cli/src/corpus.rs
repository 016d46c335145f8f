//! catalog, index, gen, label and predict.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use mcf_core::embedding::{build_index, CodeIndex};
use mcf_core::gateway::{ChatRequest, GatewayError, Payload, SchemaId};
use mcf_core::jsonl::{read_jsonl, write_jsonl};
use mcf_core::prep::{numbered_note, SplitManifest, TemplatePack};
use mcf_core::seeds::derive_seed;
use mcf_core::synth::{
    generate_corpus, label_corpus, AssignmentSource, ClinicalChart, CodeAssignment, CorpusConfig,
    CorpusKind, LabelRecord, AUDIT_FILE, CHARTS_FILE, DIAGNOSTICS_FILE, GATEWAY_AUDIT_FILE,
    GENERATED_FILE, GOLD_FILE, REVIEW_QUEUE_FILE,
};
use mcf_core::taxonomy::{parse_icd, CodeSystem, Domain};
use rayon::prelude::*;
use serde::Serialize;

use crate::args::{
    CatalogValidateArgs, GenArgs, Globals, IndexBuildArgs, LabelArgs, PredictArgs, SplitPart,
};
use crate::error::CliError;
use crate::manifest::ManifestBuilder;
use crate::providers::{catalogs, embedder, gateway, load_catalog};

pub const CATALOG_SUMMARY_FILE: &str = "catalog_summary.json";

pub(crate) fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(CliError::io(dir))?;
    }
    let text = serde_json::to_string_pretty(value).expect("value serializes") + "\n";
    std::fs::write(path, text).map_err(CliError::io(path))
}

/// Summary on stdout. A closed pipe (e.g. `| head`) is not an error.
pub(crate) fn print_json(value: &impl Serialize) {
    use std::io::Write;
    let _ = writeln!(
        std::io::stdout(),
        "{}",
        serde_json::to_string_pretty(value).expect("value serializes")
    );
}

/// Directory holding `file`, or `.` for a bare file name.
pub(crate) fn parent_dir(file: &Path) -> PathBuf {
    match file.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

#[derive(Serialize)]
struct CatalogSummary {
    system: CodeSystem,
    version: String,
    codes: usize,
    chapters: usize,
    blocks: usize,
    specialties: usize,
    /// Codes no chapter (ICD) or specialty (CPT) range covers.
    unmapped_codes: Vec<String>,
    /// Domain categories with no code in this catalog.
    domain_categories_without_codes: BTreeMap<String, Vec<String>>,
}

pub fn catalog_validate(g: &Globals, a: CatalogValidateArgs) -> Result<(), CliError> {
    let mut m = ManifestBuilder::new("catalog-validate", g.seed, &a, &a.out);
    let system = a.system.system();
    let (catalog, domains) = catalogs(&a.catalog, system, &mut m)?;
    let unmapped_codes: Vec<String> = catalog
        .entries()
        .filter(|(k, _)| match system {
            CodeSystem::Icd10Cm => parse_icd(k).map_or(true, |c| catalog.chapter_of(&c).is_err()),
            CodeSystem::Cpt => !catalog.specialties().iter().any(|r| r.contains(k)),
        })
        .map(|(k, _)| catalog.display_code(k))
        .collect();
    let mut domain_categories_without_codes = BTreeMap::new();
    if system == CodeSystem::Icd10Cm {
        let present: BTreeSet<String> = catalog
            .entries()
            .filter_map(|(k, _)| parse_icd(k).ok())
            .map(|c| c.category().to_string())
            .collect();
        for d in domains.domains() {
            let missing: Vec<String> = domains
                .categories(d)
                .filter(|c| !present.contains(*c))
                .map(String::from)
                .collect();
            if !missing.is_empty() {
                domain_categories_without_codes.insert(d.to_string(), missing);
            }
        }
    }
    let summary = CatalogSummary {
        system,
        version: catalog.version.clone(),
        codes: catalog.len(),
        chapters: catalog.chapters().len(),
        blocks: catalog.blocks().len(),
        specialties: catalog.specialties().len(),
        unmapped_codes,
        domain_categories_without_codes,
    };
    let out = a.out.join(CATALOG_SUMMARY_FILE);
    write_json(&out, &summary)?;
    m.output(&out)?;
    m.write()?;
    print_json(&summary);
    if !summary.unmapped_codes.is_empty() {
        return Err(CliError::Data(format!(
            "{} code(s) outside every range, first {}",
            summary.unmapped_codes.len(),
            summary.unmapped_codes[0]
        )));
    }
    Ok(())
}

pub fn index_build(g: &Globals, a: IndexBuildArgs) -> Result<(), CliError> {
    let dir = parent_dir(&a.out);
    let mut m = ManifestBuilder::new("index-build", g.seed, &a, &dir);
    let catalog = load_catalog(a.catalog.catalog.as_deref(), a.system.system(), &mut m)?;
    let provider = embedder(g, &a.embed, None)?;
    let index = build_index(&catalog, provider.as_ref(), a.progress.as_deref())?;
    std::fs::create_dir_all(&dir).map_err(CliError::io(&dir))?;
    index
        .write_to(&a.out)
        .map_err(|e| CliError::Data(format!("{}: {e}", a.out.display())))?;
    m.output(&a.out)?;
    if let Some(path) = &a.export_jsonl {
        let f = std::fs::File::create(path).map_err(CliError::io(path))?;
        index
            .export_jsonl(std::io::BufWriter::new(f))
            .map_err(CliError::io(path))?;
        m.output(path)?;
    }
    m.write()?;
    print_json(&serde_json::json!({
        "system": index.system,
        "catalog_version": index.catalog_version,
        "provider_id": index.provider_id,
        "dim": index.dim,
        "items": index.len(),
    }));
    Ok(())
}

/// Spreads `count` over `targets`, earlier targets taking the remainder.
fn even_plan<T: Clone>(targets: &[T], count: usize) -> Vec<(T, usize)> {
    let k = targets.len().max(1);
    targets
        .iter()
        .enumerate()
        .map(|(i, t)| (t.clone(), count / k + usize::from(i < count % k)))
        .filter(|(_, n)| *n > 0)
        .collect()
}

pub fn gen(g: &Globals, a: GenArgs) -> Result<(), CliError> {
    let mut m = ManifestBuilder::new("gen", g.seed, &a, &a.out);
    let system = a.kind.system();
    let (catalog, domains) = catalogs(&a.catalog, system, &mut m)?;
    let mut cfg = CorpusConfig::new(a.kind.corpus(), &a.out, g.seed);
    cfg.secure_dir = a.secure_dir.clone();
    match a.kind.corpus() {
        CorpusKind::Icd => {
            let targets = a
                .domains
                .iter()
                .map(|d| d.parse::<Domain>().map_err(CliError::Usage))
                .collect::<Result<Vec<_>, _>>()?;
            cfg.icd_plan = even_plan(&targets, a.count);
        }
        CorpusKind::Cpt => {
            let targets: Vec<String> = if a.specialties.is_empty() {
                catalog
                    .specialties()
                    .iter()
                    .map(|r| r.label.clone())
                    .collect()
            } else {
                a.specialties.clone()
            };
            cfg.cpt_plan = even_plan(&targets, a.count);
        }
    }
    let gw = gateway(g, &a.chat, |p| p, &mut m)?;
    let diag = generate_corpus(&cfg, &catalog, &domains, &gw)?;
    m.output(&a.out.join(CHARTS_FILE))?;
    m.write()?;
    print_json(&diag);
    Ok(())
}

fn load_or_build_index(
    path: Option<&Path>,
    catalog: &mcf_core::taxonomy::CodeCatalog,
    provider: &dyn mcf_core::embedding::EmbeddingProvider,
    m: &mut ManifestBuilder,
) -> Result<CodeIndex, CliError> {
    match path {
        Some(p) => {
            let index = CodeIndex::read_from(p)
                .map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?;
            m.input(p)?;
            Ok(index)
        }
        None => Ok(build_index(catalog, provider, None)?),
    }
}

pub fn label(g: &Globals, a: LabelArgs) -> Result<(), CliError> {
    let mut m = ManifestBuilder::new("label", g.seed, &a, &a.out);
    let system = a.kind.system();
    let (catalog, _) = catalogs(&a.catalog, system, &mut m)?;
    let stored_dim = match &a.index {
        Some(p) => Some(
            CodeIndex::read_from(p)
                .map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?
                .dim,
        ),
        None => None,
    };
    let provider = embedder(g, &a.embed, stored_dim)?;
    let index = load_or_build_index(a.index.as_deref(), &catalog, provider.as_ref(), &mut m)?;
    if index.system != system {
        return Err(CliError::Data(format!(
            "index is for {}, labeling {system}",
            index.system
        )));
    }
    let charts = a.out.join(CHARTS_FILE);
    if !charts.exists() {
        return Err(CliError::Data(format!(
            "{}: not found (run `gen` first)",
            charts.display()
        )));
    }
    if a.kind.corpus() == CorpusKind::Icd {
        m.input(&charts)?;
    }
    let mut cfg = CorpusConfig::new(a.kind.corpus(), &a.out, g.seed);
    cfg.icd_label.top_n = a.top_n;
    let gw = gateway(g, &a.chat, |p| p, &mut m)?;
    let diag = label_corpus(&cfg, &catalog, &index, provider.as_ref(), &gw)?;
    if a.kind.corpus() == CorpusKind::Cpt {
        m.input(&a.out.join(GENERATED_FILE))?;
        m.output(&charts)?;
    }
    let outputs: Vec<PathBuf> = [
        GOLD_FILE,
        REVIEW_QUEUE_FILE,
        AUDIT_FILE,
        GATEWAY_AUDIT_FILE,
        DIAGNOSTICS_FILE,
    ]
    .iter()
    .map(|f| a.out.join(f))
    .collect();
    m.outputs_if_present(&outputs)?;
    m.write()?;
    print_json(&diag);
    Ok(())
}

#[derive(Serialize)]
struct PredictSummary {
    charts: usize,
    predicted: usize,
    /// Charts whose response never passed schema validation.
    no_valid_prediction: usize,
    assignments: usize,
}

fn to_assignments(payload: Payload) -> Vec<CodeAssignment> {
    match payload {
        Payload::IcdAssignments(items) => items
            .into_iter()
            .map(|r| CodeAssignment {
                code: r.code,
                rationale: r.rationale,
                evidence_lines: r.evidence.line_index.into_iter().collect(),
                source: AssignmentSource::Predicted,
            })
            .collect(),
        Payload::CptAssignments(items) => items
            .into_iter()
            .map(|r| CodeAssignment {
                code: r.code,
                rationale: r.rationale,
                evidence_lines: BTreeSet::new(),
                source: AssignmentSource::Predicted,
            })
            .collect(),
        _ => Vec::new(),
    }
}

pub fn predict(g: &Globals, a: PredictArgs) -> Result<(), CliError> {
    let dir = parent_dir(&a.out);
    let mut m = ManifestBuilder::new("predict", g.seed, &a, &dir);
    let kind = a.kind.corpus();
    let (catalog, _) = catalogs(&a.catalog, a.kind.system(), &mut m)?;
    let mut charts: Vec<ClinicalChart> = read_jsonl(&a.charts)?;
    m.input(&a.charts)?;
    if let Some(path) = &a.split_manifest {
        let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
        let split: SplitManifest = serde_json::from_str(&text)
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        m.input(path)?;
        let keep: BTreeSet<&str> = match a.split {
            SplitPart::Train => split.train_ids.iter().map(String::as_str).collect(),
            SplitPart::Eval => split.eval_ids.iter().map(String::as_str).collect(),
            SplitPart::All => split
                .train_ids
                .iter()
                .chain(&split.eval_ids)
                .map(String::as_str)
                .collect(),
        };
        charts.retain(|c| keep.contains(c.chart_id.as_str()));
    }
    let pack = match &a.templates {
        Some(dir) => TemplatePack::load(dir)?,
        None => TemplatePack::bundled(),
    };
    if !(0.0..=1.0).contains(&a.noise) {
        return Err(CliError::Usage(format!(
            "--noise {} outside [0, 1]",
            a.noise
        )));
    }
    let gw = gateway(
        g,
        &a.chat,
        |p| p.with_lexicon(&catalog).with_noise(a.noise),
        &mut m,
    )?;
    let schema = match kind {
        CorpusKind::Icd => SchemaId::IcdAssignments,
        CorpusKind::Cpt => SchemaId::CptAssignments,
    };
    let results: Vec<Result<Option<LabelRecord>, GatewayError>> = charts
        .par_iter()
        .map(|c| {
            let user = format!("{}\n\n{}", pack.instruction(kind), numbered_note(&c.lines));
            let seed = derive_seed(g.seed, &format!("predict:{}", c.chart_id), 0);
            let req = ChatRequest::new(pack.system.clone(), user, schema).with_seed(seed);
            match gw.chat(&req) {
                Ok(out) => Ok(Some(LabelRecord {
                    chart_id: c.chart_id.clone(),
                    assignments: to_assignments(out.payload),
                })),
                Err(GatewayError::SchemaViolation { .. }) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect();
    let mut records = Vec::new();
    let mut failed = 0;
    for r in results {
        match r? {
            Some(rec) => records.push(rec),
            None => failed += 1,
        }
    }
    std::fs::create_dir_all(&dir).map_err(CliError::io(&dir))?;
    write_jsonl(&a.out, &records)?;
    m.output(&a.out)?;
    m.write()?;
    print_json(&PredictSummary {
        charts: charts.len(),
        predicted: records.len(),
        no_valid_prediction: failed,
        assignments: records.iter().map(|r| r.assignments.len()).sum(),
    });
    Ok(())
}
