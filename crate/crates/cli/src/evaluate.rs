//! prep, evaluate and analyze.

use std::collections::BTreeSet;
use std::sync::Arc;

use mcf_core::eval::{
    evaluate_corpus, frequency_analysis, frequency_csv, iqr_outliers, outliers_csv, train_counts,
    write_report, CategoryScore, EvalInput, EvalReport, FREQ_CSV, OUTLIERS_CSV, REPORT_JSON,
    REPORT_MD,
};
use mcf_core::jsonl::read_jsonl;
use mcf_core::prep::{
    prepare, ByteTokenizer, PackConfig, PrepConfig, TemplatePack, Tokenizer, WhitespaceTokenizer,
    DEDUPE_LOG_FILE, EVAL_FILE, MANIFEST_FILE, PACKED_FILE, PREP_REPORT_FILE, TRAIN_FILE,
};
use mcf_core::seeds::derive_seed;
use mcf_core::synth::{LabelRecord, CHARTS_FILE, GOLD_FILE};
use mcf_core::taxonomy::CodeSystem;

use crate::args::{
    AnalyzeFreqArgs, AnalyzeOutliersArgs, EvaluateArgs, Globals, PrepArgs, TokenizerArg,
};
use crate::corpus::{print_json, write_json};
use crate::error::CliError;
use crate::manifest::{recorded_catalog_version, ManifestBuilder};
use crate::providers::catalogs;

pub fn prep(g: &Globals, a: PrepArgs) -> Result<(), CliError> {
    let mut m = ManifestBuilder::new("prep", g.seed, &a, &a.out);
    let mut cfg = PrepConfig::new(a.kind.corpus(), &a.corpus, &a.out);
    cfg.dedupe_threshold = a.dedupe_threshold;
    cfg.split_seed = a
        .split_seed
        .unwrap_or_else(|| derive_seed(g.seed, "split", 0));
    cfg.augment_fraction = a.augment_fraction;
    cfg.augment_mode = a.augment_mode.into();
    cfg.pack = PackConfig {
        max_len: a.max_len,
        ..PackConfig::default()
    };
    cfg.tokenizer = match a.tokenizer {
        TokenizerArg::Whitespace => Arc::new(WhitespaceTokenizer::default()) as Arc<dyn Tokenizer>,
        TokenizerArg::Byte => Arc::new(ByteTokenizer),
    };
    if let Some(dir) = &a.templates {
        cfg.templates = TemplatePack::load(dir)?;
    }
    for f in [CHARTS_FILE, GOLD_FILE] {
        m.input(&a.corpus.join(f))?;
    }
    let report = prepare(&cfg)?;
    for f in [
        MANIFEST_FILE,
        DEDUPE_LOG_FILE,
        TRAIN_FILE,
        EVAL_FILE,
        PACKED_FILE,
        PREP_REPORT_FILE,
    ] {
        m.output(&a.out.join(f))?;
    }
    m.write()?;
    print_json(&report);
    Ok(())
}

/// `0-4`, `0,3`, `2` and mixtures like `0-1,3`.
pub fn parse_levels(spec: &str) -> Result<BTreeSet<usize>, CliError> {
    let bad = || {
        CliError::Usage(format!(
            "invalid --levels {spec:?}: expected e.g. 0-4 or 0,3"
        ))
    };
    let num = |s: &str| s.trim().parse::<usize>().ok().filter(|l| *l <= 4);
    let mut out = BTreeSet::new();
    for part in spec.split(',') {
        match part.split_once('-') {
            Some((lo, hi)) => {
                let (lo, hi) = (num(lo).ok_or_else(bad)?, num(hi).ok_or_else(bad)?);
                if lo > hi {
                    return Err(bad());
                }
                out.extend(lo..=hi);
            }
            None => {
                out.insert(num(part).ok_or_else(bad)?);
            }
        }
    }
    Ok(out)
}

fn read_labels(
    path: &std::path::Path,
    m: &mut ManifestBuilder,
) -> Result<Vec<LabelRecord>, CliError> {
    let records = read_jsonl(path)?;
    m.input(path)?;
    Ok(records)
}

pub fn evaluate(g: &Globals, a: EvaluateArgs) -> Result<(), CliError> {
    let levels = parse_levels(&a.levels)?;
    let mut m = ManifestBuilder::new("evaluate", g.seed, &a, &a.out);
    let system = a.system.system();
    let gold = read_labels(&a.gold, &mut m)?;
    let pred = read_labels(&a.pred, &mut m)?;
    let train = match &a.train_gold {
        Some(p) => Some(read_labels(p, &mut m)?),
        None => None,
    };
    let (catalog, domains) = catalogs(&a.catalog, system, &mut m)?;
    let key = system.to_string();
    let gold_version = a
        .gold_catalog_version
        .clone()
        .or_else(|| recorded_catalog_version(&a.gold, &key));
    let pred_version = a
        .pred_catalog_version
        .clone()
        .or_else(|| recorded_catalog_version(&a.pred, &key));
    for v in [&gold_version, &pred_version].into_iter().flatten() {
        if *v != catalog.version {
            return Err(CliError::Data(format!(
                "labels were produced with catalog version {v}, evaluation catalog is {}",
                catalog.version
            )));
        }
    }
    let mut report = evaluate_corpus(&EvalInput {
        catalog: &catalog,
        domains: &domains,
        gold: &gold,
        pred: &pred,
        train_gold: train.as_deref(),
        semantics: a.semantics.into(),
        min_cases: a.min_cases,
        gold_catalog_version: gold_version,
        pred_catalog_version: pred_version,
    })?;
    if system == CodeSystem::Icd10Cm {
        let wanted: BTreeSet<String> = levels.iter().map(|l| format!("L{l}")).collect();
        report.levels.retain(|l| wanted.contains(&l.level));
    }
    write_report(&a.out, &report)?;
    for f in [REPORT_JSON, REPORT_MD, FREQ_CSV, OUTLIERS_CSV] {
        m.output(&a.out.join(f))?;
    }
    m.write()?;
    print_json(&serde_json::json!({
        "n_docs": report.n_docs,
        "levels": report.levels,
        "jaccard_mean": report.jaccard_mean,
        "response_quality": report.response_quality,
        "outliers": report.outliers.outliers,
    }));
    Ok(())
}

fn read_report(path: &std::path::Path, m: &mut ManifestBuilder) -> Result<EvalReport, CliError> {
    let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
    let report = serde_json::from_str(&text)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    m.input(path)?;
    Ok(report)
}

fn category_scores(r: &EvalReport) -> Vec<CategoryScore> {
    r.per_category
        .iter()
        .map(|g| CategoryScore {
            category: g.group.clone(),
            f1: g.f1.mean,
            eval_count: g.n_cases,
        })
        .collect()
}

pub fn analyze_freq(g: &Globals, a: AnalyzeFreqArgs) -> Result<(), CliError> {
    let mut m = ManifestBuilder::new("analyze-freq", g.seed, &a, &a.out);
    let report = read_report(&a.report, &mut m)?;
    let train = read_labels(&a.train_gold, &mut m)?;
    let analysis = frequency_analysis(
        &train_counts(report.system, &train),
        &category_scores(&report),
    );
    std::fs::create_dir_all(&a.out).map_err(CliError::io(&a.out))?;
    let csv = a.out.join(FREQ_CSV);
    std::fs::write(&csv, frequency_csv(&analysis)).map_err(CliError::io(&csv))?;
    let json = a.out.join("freq.json");
    write_json(&json, &analysis)?;
    m.output(&csv)?.output(&json)?;
    m.write()?;
    print_json(&analysis.bins);
    Ok(())
}

pub fn analyze_outliers(g: &Globals, a: AnalyzeOutliersArgs) -> Result<(), CliError> {
    let mut m = ManifestBuilder::new("analyze-outliers", g.seed, &a, &a.out);
    let report = read_report(&a.report, &mut m)?;
    let iqr = iqr_outliers(&category_scores(&report), a.min_cases);
    std::fs::create_dir_all(&a.out).map_err(CliError::io(&a.out))?;
    let csv = a.out.join(OUTLIERS_CSV);
    std::fs::write(&csv, outliers_csv(&iqr)).map_err(CliError::io(&csv))?;
    let json = a.out.join("outliers.json");
    write_json(&json, &iqr)?;
    m.output(&csv)?.output(&json)?;
    m.write()?;
    print_json(&iqr);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn level_specs() {
        assert_eq!(parse_levels("0-4").unwrap(), (0..=4).collect());
        assert_eq!(parse_levels("0,3").unwrap(), [0, 3].into_iter().collect());
        assert_eq!(
            parse_levels("0-1,3").unwrap(),
            [0, 1, 3].into_iter().collect()
        );
        for bad in ["5", "3-1", "", "a", "0-"] {
            assert!(parse_levels(bad).is_err(), "{bad}");
        }
    }
}
