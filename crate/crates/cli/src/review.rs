//! expert-eval, serve-review and verify-run.

use std::net::SocketAddr;

use mcf_core::jsonl::read_jsonl;
use mcf_core::synth::LabelRecord;
use mcf_core::taxonomy::{bundled, CodeCatalog, CodeSystem};
use mcf_review::{
    evaluate_expert, export_ground_truth, filter_domain, read_ground_truth, write_ground_truth,
    DecisionStore, ExpertReport, ExportMode, ReviewCorpus, ReviewState, ServeConfig,
    EXPERT_GOLD_FILE, EXPERT_GOLD_META_FILE,
};

use crate::args::{ExpertEvalArgs, Globals, ServeReviewArgs, VerifyRunArgs};
use crate::corpus::{print_json, write_json};
use crate::error::CliError;
use crate::manifest::{verify, ManifestBuilder};
use crate::providers::{bundled_content, load_domains};

pub const EXPERT_REPORT_FILE: &str = "expert_report.json";
pub const EXPERT_REPORT_MD: &str = "expert_report.md";
pub const TOKEN_ENV: &str = "MCF_REVIEW_TOKEN";

pub fn parse_mode(s: &str) -> Result<ExportMode, CliError> {
    match s {
        "latest" => Ok(ExportMode::Latest),
        "unanimous" => Ok(ExportMode::Unanimous),
        _ => match s.strip_prefix("reviewer:") {
            Some(r) if !r.is_empty() => Ok(ExportMode::Reviewer(r.to_string())),
            _ => Err(CliError::Usage(format!(
                "invalid --mode {s:?}: expected latest, unanimous or reviewer:<id>"
            ))),
        },
    }
}

fn markdown(r: &ExpertReport) -> String {
    let mut out = format!(
        "# Expert evaluation\n\nReview session `{}`, {} charts. {} predicted codes outside the targeted domains were removed.\n\n",
        r.review_session_id, r.n_charts, r.filter.removed
    );
    out.push_str("| Level | Precision (SE) | Recall (SE) | F1 (SE) |\n|---|---|---|---|\n");
    for l in &r.levels {
        out.push_str(&format!(
            "| {} | {:.3} ({:.3}) | {:.3} ({:.3}) | {:.3} ({:.3}) |\n",
            l.level,
            l.precision.mean,
            l.precision.se,
            l.recall.mean,
            l.recall.se,
            l.f1.mean,
            l.f1.se
        ));
    }
    out
}

pub fn expert_eval(g: &Globals, a: ExpertEvalArgs) -> Result<(), CliError> {
    let mut m = ManifestBuilder::new("expert-eval", g.seed, &a, &a.out);
    let gt = match (&a.ground_truth, &a.corpus, &a.gold, &a.store) {
        (Some(dir), ..) => {
            let gt = read_ground_truth(dir)?;
            m.input(&dir.join(EXPERT_GOLD_FILE))?
                .input(&dir.join(EXPERT_GOLD_META_FILE))?;
            gt
        }
        (None, Some(charts), Some(gold), Some(store)) => {
            let corpus = ReviewCorpus::load(charts, gold)?;
            let (_, events) = DecisionStore::open(store)?;
            m.input(charts)?.input(gold)?.input(store)?;
            let state = ReviewState::replay(&events);
            let gt = export_ground_truth(&corpus, &state, &parse_mode(&a.mode)?, a.force)?;
            write_ground_truth(&a.out, &gt)?;
            m.output(&a.out.join(EXPERT_GOLD_FILE))?
                .output(&a.out.join(EXPERT_GOLD_META_FILE))?;
            gt
        }
        _ => {
            return Err(CliError::Usage(
                "expert-eval needs --ground-truth DIR or all of --corpus, --gold and --store"
                    .into(),
            ))
        }
    };
    let preds: Vec<LabelRecord> = read_jsonl(&a.pred)?;
    m.input(&a.pred)?;
    let domains = load_domains(a.domain_sets.as_deref(), &mut m)?;
    let filtered = filter_domain(&preds, &domains);
    let report = evaluate_expert(&filtered, &gt, a.semantics.into())?;
    let json = a.out.join(EXPERT_REPORT_FILE);
    write_json(&json, &report)?;
    let md = a.out.join(EXPERT_REPORT_MD);
    std::fs::write(&md, markdown(&report)).map_err(CliError::io(&md))?;
    m.output(&json)?.output(&md)?;
    m.write()?;
    print_json(&serde_json::json!({
        "review_session_id": report.review_session_id,
        "n_charts": report.n_charts,
        "levels": report.levels,
        "filter": report.filter,
    }));
    Ok(())
}

pub fn serve_review(g: &Globals, a: ServeReviewArgs) -> Result<(), CliError> {
    let addr: SocketAddr = format!("{}:{}", a.host, a.port)
        .parse()
        .map_err(|e| CliError::Usage(format!("invalid --host/--port: {e}")))?;
    let mut m = ManifestBuilder::new("serve-review", g.seed, &a, &a.export_dir);
    m.input(&a.corpus)?.input(&a.gold)?;
    let catalog = match &a.catalog {
        Some(p) => {
            m.input(p)?;
            CodeCatalog::load(p, CodeSystem::Icd10Cm)
                .map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?
        }
        None => bundled::icd_catalog(),
    };
    m.catalog(CodeSystem::Icd10Cm, &catalog.version);
    m.write()?;
    let cfg = ServeConfig {
        addr,
        charts: a.corpus,
        gold: a.gold,
        store: a.store,
        export_dir: a.export_dir,
        catalog: Some(catalog),
        token: std::env::var(TOKEN_ENV).ok().filter(|t| !t.is_empty()),
        ui_dir: a.ui_dir,
    };
    let rt = tokio::runtime::Runtime::new()
        .map_err(|e| CliError::Data(format!("cannot start runtime: {e}")))?;
    eprintln!("mcf: review API listening on http://{addr}/api");
    rt.block_on(mcf_review::serve(cfg))?;
    Ok(())
}

pub fn verify_run(a: VerifyRunArgs) -> Result<(), CliError> {
    let v = verify(&a.manifest, &bundled_content)?;
    print_json(&v);
    if v.ok() {
        Ok(())
    } else {
        Err(CliError::Data(format!(
            "{}: {} of {} recorded file(s) changed{}",
            a.manifest.display(),
            v.mismatches.len(),
            v.checked,
            if v.manifest_hash_ok {
                ""
            } else {
                ", manifest itself was edited"
            }
        )))
    }
}
