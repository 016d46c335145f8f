//! Acceptance suite: one line per criterion, each checked against an
//! independent oracle or a published figure, with its runtime budget.
//!
//! Runs as a plain binary (`harness = false`) so the verdict lines are
//! always visible in `cargo test` output.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use mcf_core::embedding::{
    fallback_expand, query_top_n, Candidate, CodeIndex, EmbeddingVector, IndexItem,
};
use mcf_core::eval::{
    aggregate_corpus, doc_prf, evaluate_icd_doc, iqr_outliers, match_level, mean_se,
    weighted_aggregate, CategoryScore, CodeRow, DocEval, EvalReport, IcdLabel, LevelCounts,
    LevelSummary, MatchSemantics, Prf,
};
use mcf_core::prep::{
    augment, char_shingles, concat_pair, dedupe, jaccard_sets, pack, packing_efficiency, split,
    unpack_all, AugmentMode, LabeledNote, PackConfig, PrepError, TemplatePack, TokenizedSample,
    WhitespaceTokenizer,
};
use mcf_core::synth::{
    AssignmentSource, ClinicalChart, CodeAssignment, CorpusKind, LabelRecord, Provenance,
    DEFAULT_CREATED_AT, PIPELINE_VERSION,
};
use mcf_core::taxonomy::{bundled, CodeSystem, Domain};
use mcf_review::{
    evaluate_expert, export_ground_truth, filter_domain, ExportMode, ReviewCorpus, ReviewDecision,
    ReviewState, Verdict,
};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

struct Criterion {
    name: &'static str,
    budget: Option<Duration>,
    run: fn() -> Outcome,
}

fn main() {
    let criteria = [
        Criterion {
            name: "domain aggregation",
            budget: Some(Duration::from_secs(1)),
            run: domain_aggregation,
        },
        Criterion {
            name: "headline scores (schema fixtures only)",
            budget: None,
            run: headline_fixtures,
        },
        Criterion {
            name: "metric oracle equivalence",
            budget: Some(Duration::from_secs(30)),
            run: metric_oracle,
        },
        Criterion {
            name: "level monotonicity",
            budget: None,
            run: level_monotonicity,
        },
        Criterion {
            name: "sequence packing",
            budget: Some(Duration::from_secs(10)),
            run: packing,
        },
        Criterion {
            name: "augmentation evidence integrity",
            budget: None,
            run: augmentation,
        },
        Criterion {
            name: "retrieval exactness",
            budget: None,
            run: retrieval,
        },
        Criterion {
            name: "end-to-end offline smoke",
            budget: Some(Duration::from_secs(60)),
            run: end_to_end,
        },
        Criterion {
            name: "split and dedupe",
            budget: None,
            run: split_dedupe,
        },
        Criterion {
            name: "IQR outlier fixture",
            budget: None,
            run: iqr_fixture,
        },
        Criterion {
            name: "expert-eval pipeline",
            budget: None,
            run: expert_eval,
        },
    ];
    let default_hook = std::panic::take_hook();
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    println!("\nacceptance criteria");
    for c in &criteria {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(c.run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into());
            Err(format!("panic: {msg}"))
        });
        let elapsed = start.elapsed();
        let result = match (result, c.budget) {
            (Ok(_), Some(b)) if elapsed > b => Err(format!("took {elapsed:?}, budget {b:?}")),
            (r, _) => r,
        };
        let budget = c
            .budget
            .map(|b| format!(" / {}s", b.as_secs()))
            .unwrap_or_default();
        match result {
            Ok(detail) => println!(
                "PASS  {:<40} {:>8.3}s{budget}  {detail}",
                c.name,
                elapsed.as_secs_f64()
            ),
            Err(why) => {
                failed += 1;
                println!(
                    "FAIL  {:<40} {:>8.3}s{budget}  {why}",
                    c.name,
                    elapsed.as_secs_f64()
                );
            }
        }
    }
    std::panic::set_hook(default_hook);
    println!(
        "{} of {} criteria passed\n",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

// ---------------------------------------------------------------- domain aggregation

fn domain_row(name: &str, n: usize, p: (f64, f64), r: (f64, f64), f: (f64, f64)) -> CodeRow {
    CodeRow {
        code: name.into(),
        n_cases: n,
        precision: p.0,
        recall: r.0,
        f1: f.0,
        std: Some([p.1, r.1, f.1]),
    }
}

fn domain_aggregation() -> Outcome {
    let rows = [
        domain_row(
            "AdvancedIllness",
            896,
            (0.9008, 0.1008),
            (0.8380, 0.1184),
            (0.8630, 0.1039),
        ),
        domain_row(
            "Frailty",
            2128,
            (0.8727, 0.1086),
            (0.8749, 0.1303),
            (0.8727, 0.1173),
        ),
        domain_row(
            "SDoH",
            1176,
            (0.7716, 0.1391),
            (0.7640, 0.1578),
            (0.7668, 0.1491),
        ),
    ];
    let all: Vec<&CodeRow> = rows.iter().collect();
    let without: Vec<&CodeRow> = rows.iter().filter(|r| r.code != "SDoH").collect();
    let published = [
        (
            weighted_aggregate("Combined", &all),
            [0.8504, 0.8360, 0.8410],
        ),
        (
            weighted_aggregate("Combined w/o SDoH", &without),
            [0.8810, 0.8639, 0.8698],
        ),
    ];
    let mut worst: f64 = 0.0;
    for (g, expected) in &published {
        let got = [g.precision.mean, g.recall.mean, g.f1.mean];
        for k in 0..3 {
            let d = (got[k] - expected[k]).abs();
            worst = worst.max(d);
            ensure!(
                d <= 0.0005,
                "{} metric {k}: {:.5} vs {:.4}",
                g.group,
                got[k],
                expected[k]
            );
        }
    }
    Ok(format!("max |diff| {worst:.5} (tolerance 0.0005)"))
}

// ---------------------------------------------------------------- headline fixtures

#[derive(Deserialize)]
struct IcdF1 {
    fine_tuned: BTreeMap<String, f64>,
    baseline: BTreeMap<String, f64>,
    improvement_l3: f64,
}

#[derive(Deserialize)]
struct CptF1 {
    fine_tuned: f64,
    baseline: f64,
    improvement: f64,
}

#[derive(Deserialize)]
struct ReferenceScores {
    icd_f1: IcdF1,
    cpt_f1: CptF1,
    expert_levels: Vec<LevelSummary>,
}

fn headline_fixtures() -> Outcome {
    let text =
        include_str!("fixtures/reference_scores.json").replace("improvement_L3", "improvement_l3");
    let r: ReferenceScores =
        serde_json::from_str(&text).map_err(|e| format!("fixture does not fit the schema: {e}"))?;
    let ft = &r.icd_f1.fine_tuned;
    ensure!(
        ft["L0"] >= ft["L3"] && ft["L3"] >= ft["L4"],
        "reference F1 not monotone in level: {ft:?}"
    );
    ensure!(
        close(
            ft["L3"] - r.icd_f1.baseline["L3"],
            r.icd_f1.improvement_l3,
            1e-9
        ),
        "ICD improvement arithmetic"
    );
    ensure!(
        close(
            r.cpt_f1.fine_tuned - r.cpt_f1.baseline,
            r.cpt_f1.improvement,
            1e-9
        ),
        "CPT improvement arithmetic"
    );
    ensure!(
        r.expert_levels.len() == 4,
        "expert table has {} levels",
        r.expert_levels.len()
    );
    for w in r.expert_levels.windows(2) {
        ensure!(
            w[0].recall.mean >= w[1].recall.mean,
            "expert recall rises from {} to {}",
            w[0].level,
            w[1].level
        );
        ensure!(
            w[0].f1.mean >= w[1].f1.mean,
            "expert F1 rises from {} to {}",
            w[0].level,
            w[1].level
        );
    }
    for l in &r.expert_levels {
        ensure!(
            l.precision.mean < l.recall.mean,
            "{}: expected low precision, high recall",
            l.level
        );
    }
    // The summaries round-trip through the report schema unchanged.
    let back: Vec<LevelSummary> =
        serde_json::from_value(serde_json::to_value(&r.expert_levels).unwrap())
            .map_err(|e| e.to_string())?;
    ensure!(
        back == r.expert_levels,
        "expert summaries do not round-trip"
    );
    Ok("fixtures parse and are internally consistent; scores need the fine-tuned model and are not recomputed".into())
}

// ---------------------------------------------------------------- metric oracle

/// Codes with heavily shared prefixes so every level gets exercised.
const CODE_POOL: [&str; 16] = [
    "E11.9", "E11.65", "E11.22", "E11.42", "E78.5", "I10", "I50.9", "I50.22", "I63.9", "J44.1",
    "J44.9", "Z59.0", "Z59.1", "Z60.2", "R54", "R53.81",
];

#[derive(Clone)]
struct RawLabel {
    code: String,
    evidence: BTreeSet<usize>,
}

fn random_labels(rng: &mut ChaCha8Rng) -> Vec<RawLabel> {
    let n = rng.random_range(0..=8);
    (0..n)
        .map(|_| {
            let code = CODE_POOL.choose(rng).unwrap().to_string();
            let k = rng.random_range(0..=3);
            let evidence = (0..k).map(|_| rng.random_range(0..6)).collect();
            RawLabel { code, evidence }
        })
        .collect()
}

fn to_icd(labels: &[RawLabel]) -> Vec<IcdLabel> {
    labels
        .iter()
        .map(|l| IcdLabel::new(&l.code, l.evidence.iter().copied()).unwrap())
        .collect()
}

fn oracle_key(code: &str, level: u8) -> String {
    let norm: String = code
        .chars()
        .filter(|c| *c != '.')
        .collect::<String>()
        .to_ascii_uppercase();
    match level {
        0..=2 => norm.chars().take(3 + level as usize).collect(),
        _ => norm,
    }
}

/// Largest one-to-one pairing, by exhaustive search over which gold item
/// (or none) each prediction takes.
fn oracle_max_pairs(
    pred: &[RawLabel],
    gold: &[RawLabel],
    ok: &dyn Fn(&RawLabel, &RawLabel) -> bool,
) -> usize {
    fn go(
        i: usize,
        used: u32,
        pred: &[RawLabel],
        gold: &[RawLabel],
        ok: &dyn Fn(&RawLabel, &RawLabel) -> bool,
        memo: &mut BTreeMap<(usize, u32), usize>,
    ) -> usize {
        if i == pred.len() {
            return 0;
        }
        if let Some(&v) = memo.get(&(i, used)) {
            return v;
        }
        let mut best = go(i + 1, used, pred, gold, ok, memo);
        for (j, g) in gold.iter().enumerate() {
            if used & (1 << j) == 0 && ok(&pred[i], g) {
                best = best.max(1 + go(i + 1, used | (1 << j), pred, gold, ok, memo));
            }
        }
        memo.insert((i, used), best);
        best
    }
    go(0, 0, pred, gold, ok, &mut BTreeMap::new())
}

fn oracle_collapse(labels: &[RawLabel]) -> Vec<RawLabel> {
    let mut merged: BTreeMap<String, BTreeSet<usize>> = BTreeMap::new();
    for l in labels {
        merged
            .entry(oracle_key(&l.code, 3))
            .or_default()
            .extend(&l.evidence);
    }
    merged
        .into_iter()
        .map(|(code, evidence)| RawLabel { code, evidence })
        .collect()
}

fn oracle_counts(
    pred: &[RawLabel],
    gold: &[RawLabel],
    level: u8,
    sem: MatchSemantics,
) -> LevelCounts {
    let (p, g) = match sem {
        MatchSemantics::Set => (oracle_collapse(pred), oracle_collapse(gold)),
        MatchSemantics::Multiset => (pred.to_vec(), gold.to_vec()),
    };
    let ok = move |a: &RawLabel, b: &RawLabel| {
        oracle_key(&a.code, level) == oracle_key(&b.code, level)
            && (level < 4 || !a.evidence.is_disjoint(&b.evidence))
    };
    LevelCounts {
        true_pos: oracle_max_pairs(&p, &g, &ok),
        pred_count: p.len(),
        gold_count: g.len(),
    }
}

fn oracle_prf(c: LevelCounts) -> Prf {
    let (tp, p, g) = (c.true_pos as f64, c.pred_count as f64, c.gold_count as f64);
    let precision = if p == 0.0 {
        if g == 0.0 {
            1.0
        } else {
            0.0
        }
    } else {
        tp / p
    };
    let recall = if g == 0.0 { 1.0 } else { tp / g };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Prf {
        precision,
        recall,
        f1,
    }
}

fn metric_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(20_001);
    let mut comparisons = 0;
    for doc in 0..1000 {
        let (p, g) = (random_labels(&mut rng), random_labels(&mut rng));
        let (pi, gi) = (to_icd(&p), to_icd(&g));
        for sem in [MatchSemantics::Set, MatchSemantics::Multiset] {
            for level in 0..=4u8 {
                let got = match_level(&pi, &gi, level, sem);
                let want = oracle_counts(&p, &g, level, sem);
                ensure!(
                    got == want,
                    "doc {doc} {sem:?} L{level}: engine {got:?}, oracle {want:?}"
                );
                let (a, b) = (doc_prf(got), oracle_prf(want));
                ensure!(a == b, "doc {doc} {sem:?} L{level}: prf {a:?} vs {b:?}");
                comparisons += 1;
            }
        }
    }
    Ok(format!(
        "{comparisons} level/semantics comparisons over 1000 documents, all exact"
    ))
}

// ---------------------------------------------------------------- monotonicity

fn level_monotonicity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(20_002);
    let mut docs_checked = 0;
    for corpus in 0..200 {
        let n = rng.random_range(1..=20);
        for sem in [MatchSemantics::Set, MatchSemantics::Multiset] {
            let mut rng_c = ChaCha8Rng::seed_from_u64(corpus as u64);
            let docs: Vec<DocEval> = (0..n)
                .map(|i| {
                    let (p, g) = (random_labels(&mut rng_c), random_labels(&mut rng_c));
                    evaluate_icd_doc(&format!("d{i}"), &to_icd(&p), &to_icd(&g), sem)
                })
                .collect();
            for d in &docs {
                let tp: Vec<usize> = d.levels.iter().map(|l| l.true_pos).collect();
                ensure!(
                    tp.windows(2).all(|w| w[0] >= w[1]),
                    "corpus {corpus} {}: tp {tp:?}",
                    d.chart_id
                );
                docs_checked += 1;
            }
            let scores = aggregate_corpus(&docs).map_err(|e| e.to_string())?;
            let f1: Vec<f64> = scores.iter().map(|s| s.macro_avg.f1).collect();
            ensure!(
                f1.windows(2).all(|w| w[0] >= w[1] - 1e-12),
                "corpus {corpus} {sem:?}: macro F1 {f1:?}"
            );
        }
    }
    Ok(format!("{docs_checked} documents in 400 corpora"))
}

// ---------------------------------------------------------------- packing

fn packing() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(20_003);
    let cfg = PackConfig::default();
    let mut min_eff = f64::INFINITY;
    let mut sequences = 0;
    for list in 0..500 {
        // Even lists are uniform in [200, 2000]; odd lists use any legal length.
        let uniform = list % 2 == 0;
        let n = rng.random_range(if uniform { 100..=300 } else { 1..=60 });
        let samples: Vec<TokenizedSample> = (0..n)
            .map(|i| {
                let len = if uniform {
                    rng.random_range(200..=2000)
                } else {
                    rng.random_range(1..=cfg.max_len - 1)
                };
                let base: u32 = rng.random_range(2..50_000);
                TokenizedSample {
                    sample_id: format!("l{list}-s{i}"),
                    tokens: (0..len as u32)
                        .map(|k| 2 + (base + k * 31) % 49_998)
                        .collect(),
                }
            })
            .collect();
        let seqs = pack(&samples, cfg).map_err(|e| format!("list {list}: {e}"))?;
        sequences += seqs.len();
        for s in &seqs {
            ensure!(
                s.token_ids.len() <= cfg.max_len,
                "list {list}: sequence of {} tokens",
                s.token_ids.len()
            );
            for seg in &s.segments {
                ensure!(
                    s.position_ids[seg.start] == 0,
                    "list {list}: {} does not start at position 0",
                    seg.sample_id
                );
                let run = &s.position_ids[seg.start..seg.end];
                ensure!(
                    run.iter().enumerate().all(|(i, &p)| p as usize == i),
                    "list {list}: positions of {}",
                    seg.sample_id
                );
            }
        }
        let mut back =
            unpack_all(&seqs, cfg.delimiter_id).map_err(|e| format!("list {list}: {e}"))?;
        let mut orig = samples.clone();
        back.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
        orig.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
        ensure!(back == orig, "list {list}: unpack(pack(x)) differs from x");
        if uniform {
            let eff = packing_efficiency(&seqs, cfg.max_len);
            min_eff = min_eff.min(eff);
            ensure!(eff >= 0.80, "list {list}: efficiency {eff:.3}");
        }
    }
    Ok(format!(
        "500 lists, {sequences} sequences, min efficiency {min_eff:.3} on uniform [200, 2000]"
    ))
}

// ---------------------------------------------------------------- augmentation

fn random_note(rng: &mut ChaCha8Rng, id: &str) -> LabeledNote {
    let n_lines = rng.random_range(1..=12);
    let lines: Vec<String> = (0..n_lines)
        .map(|i| format!("{id} line {i} {}", rng.random::<u32>()))
        .collect();
    let n_labels = rng.random_range(0..=4);
    let assignments = (0..n_labels)
        .map(|_| CodeAssignment {
            code: CODE_POOL.choose(rng).unwrap().to_string(),
            rationale: "documented".into(),
            evidence_lines: (0..rng.random_range(1..=3))
                .map(|_| rng.random_range(0..n_lines))
                .collect(),
            source: AssignmentSource::Gold,
        })
        .collect();
    LabeledNote {
        origin_chart_ids: vec![id.to_string()],
        lines,
        assignments,
    }
}

/// Every (code, line text) the note's labels point at.
fn referenced(note: &LabeledNote) -> BTreeSet<(String, String)> {
    note.assignments
        .iter()
        .flat_map(|a| {
            a.evidence_lines
                .iter()
                .map(move |&i| (a.code.clone(), note.lines[i].clone()))
        })
        .collect()
}

fn augmentation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(20_004);
    for pair in 0..200 {
        let (a, b) = (
            random_note(&mut rng, &format!("a{pair}")),
            random_note(&mut rng, &format!("b{pair}")),
        );
        let c = concat_pair(&a, &b);
        for l in &c.assignments {
            for &i in &l.evidence_lines {
                ensure!(
                    i < c.lines.len(),
                    "pair {pair}: index {i} past {} lines",
                    c.lines.len()
                );
            }
        }
        let want: BTreeSet<_> = referenced(&a).union(&referenced(&b)).cloned().collect();
        ensure!(
            referenced(&c) == want,
            "pair {pair}: composite evidence does not dereference to the source lines"
        );
        ensure!(
            c.origin_chart_ids == vec![format!("a{pair}"), format!("b{pair}")],
            "pair {pair}: origins"
        );
    }

    let pack = TemplatePack::bundled();
    let tok = WhitespaceTokenizer::default();
    let mut formed = 0;
    for corpus in 0..20u64 {
        let n = rng.random_range(20..=80);
        let notes: Vec<LabeledNote> = (0..n)
            .map(|i| random_note(&mut rng, &format!("c{corpus}-{i}")))
            .collect();
        let (out, rep) = augment(
            &notes,
            0.30,
            corpus,
            AugmentMode::Replace,
            CorpusKind::Icd,
            &pack,
            &tok,
            8192,
        );
        let pairs = (0.30 * n as f64 / 2.0).floor() as usize;
        let composites = out.iter().filter(|x| x.origin_chart_ids.len() == 2).count();
        let consumed: usize = out
            .iter()
            .filter(|x| x.origin_chart_ids.len() == 2)
            .map(|x| x.origin_chart_ids.len())
            .sum();
        ensure!(
            rep.formed_pairs == pairs && composites == pairs,
            "corpus {corpus}: {composites} composites, expected {pairs}"
        );
        ensure!(
            consumed == 2 * pairs,
            "corpus {corpus}: {consumed} originals consumed"
        );
        ensure!(
            out.len() == n - pairs,
            "corpus {corpus}: {} samples out of {n}",
            out.len()
        );
        let by_id: BTreeMap<&str, &LabeledNote> = notes
            .iter()
            .map(|x| (x.origin_chart_ids[0].as_str(), x))
            .collect();
        let mut seen = BTreeSet::new();
        for x in &out {
            for id in &x.origin_chart_ids {
                ensure!(seen.insert(id.clone()), "corpus {corpus}: {id} used twice");
            }
            if let [ia, ib] = x.origin_chart_ids.as_slice() {
                let want: BTreeSet<_> = referenced(by_id[ia.as_str()])
                    .union(&referenced(by_id[ib.as_str()]))
                    .cloned()
                    .collect();
                ensure!(
                    referenced(x) == want,
                    "corpus {corpus}: composite {ia}+{ib} evidence"
                );
            }
        }
        ensure!(
            seen.len() == n,
            "corpus {corpus}: {} of {n} originals accounted for",
            seen.len()
        );
        formed += pairs;
    }
    Ok(format!(
        "200 direct pairs; {formed} pairs across 20 corpora with composites = floor(0.30 n / 2)"
    ))
}

// ---------------------------------------------------------------- retrieval

fn oracle_cosine(a: &[f32], b: &[f32]) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (f64::from(x), f64::from(y));
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0)
}

fn retrieval() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(20_005);
    let dim = 6;
    let random_vec = |rng: &mut ChaCha8Rng| loop {
        let raw: Vec<f32> = (0..dim).map(|_| rng.random_range(-2..=2) as f32).collect();
        if let Ok(v) = EmbeddingVector::normalized(raw) {
            return v;
        }
    };
    let mut ties = 0;
    for t in 0..100 {
        let n = rng.random_range(1..=1000);
        // A small vector pool forces many exact score ties.
        let pool: Vec<EmbeddingVector> = (0..rng.random_range(1..=40))
            .map(|_| random_vec(&mut rng))
            .collect();
        let mut codes: Vec<String> = (0..n).map(|i| format!("C{:05}", i * 7 % 100_003)).collect();
        codes.shuffle(&mut rng);
        let items: Vec<IndexItem> = codes
            .iter()
            .map(|c| IndexItem {
                code: c.clone(),
                description: c.clone(),
                vector: pool.choose(&mut rng).unwrap().clone(),
            })
            .collect();
        let index = CodeIndex {
            system: CodeSystem::Cpt,
            dim,
            provider_id: "fixture".into(),
            catalog_version: "v".into(),
            items,
        };
        let q = random_vec(&mut rng);
        let mut brute: Vec<Candidate> = index
            .items
            .iter()
            .map(|it| Candidate {
                code: it.code.clone(),
                score: oracle_cosine(it.vector.as_slice(), q.as_slice()),
            })
            .collect();
        brute.sort_by(|a, b| {
            b.score
                .partial_cmp(&a.score)
                .unwrap()
                .then(a.code.cmp(&b.code))
        });
        ties += brute
            .windows(2)
            .filter(|w| w[0].score == w[1].score)
            .count();

        let k = rng.random_range(1..=n.min(50));
        let got = query_top_n(&index, &q, k).map_err(|e| e.to_string())?;
        ensure!(
            got.candidates == brute[..k],
            "index {t}: top-{k} differs from brute force"
        );

        // Scripted predicate: only codes ending in a chosen digit are acceptable.
        let digit = char::from(b'0' + rng.random_range(0..10u8));
        let accept = |c: &Candidate| c.code.ends_with(digit);
        let (n0, max_n) = (rng.random_range(1..=10), rng.random_range(10..=200));
        let res = fallback_expand(&index, &q, n0, max_n, accept).map_err(|e| e.to_string())?;
        let first = brute.iter().position(|c| accept(c));
        // Windows n0, 2n0, 4n0, ... capped at max_n and the index size.
        let mut end = n0.min(n);
        let mut start = 0;
        let mut expected: Vec<Candidate> = Vec::new();
        loop {
            let window: Vec<Candidate> = brute[start..end]
                .iter()
                .filter(|c| accept(c))
                .cloned()
                .collect();
            if !window.is_empty() {
                expected = window;
                break;
            }
            if end >= max_n.max(n0).min(n) || end >= n {
                break;
            }
            start = end;
            end = (end * 2).min(max_n).min(n);
        }
        ensure!(
            res.candidates == expected,
            "index {t}: fallback returned {:?}",
            res.candidates.first()
        );
        if let (Some(f), Some(c)) = (first, res.candidates.first()) {
            ensure!(
                brute[f].code == c.code,
                "index {t}: first acceptable candidate is {}, got {}",
                brute[f].code,
                c.code
            );
        }
        ensure!(
            res.expanded == first.is_none_or(|f| f >= n0.min(n)),
            "index {t}: expanded flag"
        );
    }
    Ok(format!(
        "100 indexes, {ties} tied neighbours in brute-force rankings"
    ))
}

// ---------------------------------------------------------------- end to end

fn mcf(dir: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_mcf"))
        .args(args)
        .current_dir(dir)
        .env_remove("MCF_LLM_BASE_URL")
        .env_remove("MCF_EMBED_BASE_URL")
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!(
            "mcf {}: {}",
            args.join(" "),
            String::from_utf8_lossy(&out.stderr)
        ))
    }
}

fn pipeline(dir: &Path) -> Result<(), String> {
    let seed = ["--mock", "--seed", "42"];
    let with = |rest: &[&str]| -> Vec<String> {
        rest.iter().chain(&seed).map(|s| s.to_string()).collect()
    };
    for step in [
        with(&[
            "gen",
            "icd",
            "--count",
            "20",
            "--domains",
            "AdvancedIllness,Frailty,SDoH",
            "--out",
            "corpus",
        ]),
        with(&["label", "icd", "--out", "corpus"]),
        with(&["prep", "--corpus", "corpus", "--out", "prep"]),
        with(&[
            "predict",
            "icd",
            "--charts",
            "corpus/charts.jsonl",
            "--split-manifest",
            "prep/manifest.json",
            "--split",
            "all",
            "--out",
            "pred/predictions.jsonl",
        ]),
        with(&[
            "evaluate",
            "--gold",
            "corpus/gold.jsonl",
            "--pred",
            "pred/predictions.jsonl",
            "--out",
            "eval",
        ]),
    ] {
        let args: Vec<&str> = step.iter().map(String::as_str).collect();
        mcf(dir, &args)?;
    }
    Ok(())
}

fn tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(base: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(base, &p, out);
            } else {
                out.insert(
                    p.strip_prefix(base).unwrap().display().to_string(),
                    std::fs::read(&p).unwrap(),
                );
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

fn end_to_end() -> Outcome {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    pipeline(a.path())?;
    pipeline(b.path())?;
    let text =
        std::fs::read_to_string(a.path().join("eval/report.json")).map_err(|e| e.to_string())?;
    let report: EvalReport =
        serde_json::from_str(&text).map_err(|e| format!("report.json off-schema: {e}"))?;
    let charts = std::fs::read_to_string(a.path().join("corpus/charts.jsonl"))
        .unwrap()
        .lines()
        .count();
    ensure!(charts == 20, "{charts} charts generated");
    ensure!(
        report.n_docs == 20 && report.levels.len() == 5,
        "{} docs, {} levels",
        report.n_docs,
        report.levels.len()
    );
    let f1: Vec<f64> = report.levels.iter().map(|l| l.macro_avg.f1).collect();
    ensure!(
        f1.iter().all(|v| (0.0..=1.0).contains(v)),
        "F1 out of range: {f1:?}"
    );
    ensure!(
        f1[0] > 0.0 && f1[4] < 1.0 && f1[0] > f1[4],
        "degenerate F1 profile {f1:?}"
    );
    ensure!(
        !report.per_domain.is_empty() && report.jaccard_mean.is_some(),
        "empty domain table or Jaccard"
    );
    let (ta, tb) = (tree(a.path()), tree(b.path()));
    ensure!(ta.keys().eq(tb.keys()), "reruns wrote different file sets");
    for (name, bytes) in &ta {
        ensure!(tb[name] == *bytes, "{name} differs between reruns");
    }
    for m in [
        "corpus/gen",
        "corpus/label",
        "prep/prep",
        "pred/predict",
        "eval/evaluate",
    ] {
        mcf(a.path(), &["verify-run", &format!("{m}.run_manifest.json")])?;
    }
    Ok(format!(
        "{} files byte-identical across reruns; F1 L0..L4 {:.3}..{:.3}",
        ta.len(),
        f1[0],
        f1[4]
    ))
}

// ---------------------------------------------------------------- split / dedupe

fn chart(id: &str, lines: Vec<String>) -> ClinicalChart {
    ClinicalChart {
        chart_id: id.into(),
        lines,
        seed_code: "I10".into(),
        target_codes: vec!["I10".into()],
        domain_tags: [Domain::General].into(),
        provenance: Provenance {
            meta_source_id: "builtin-1".into(),
            generator_provider_id: "mock".into(),
            created_at: DEFAULT_CREATED_AT.into(),
            pipeline_version: PIPELINE_VERSION.into(),
        },
    }
}

/// Copy of `base` with a growing tail replaced until shingle Jaccard drops
/// to `target`.
fn variant_at(base: &str, target: f64, rng: &mut ChaCha8Rng) -> (String, f64) {
    let chars: Vec<char> = base.chars().collect();
    let base_sh = char_shingles(&[base.to_string()]);
    for k in 1..chars.len() {
        let tail: String = (0..k)
            .map(|_| char::from(rng.random_range(b'!'..=b'/')))
            .collect();
        let text: String = chars[..chars.len() - k].iter().collect::<String>() + &tail;
        let j = jaccard_sets(&base_sh, &char_shingles(&[text.clone()]));
        if j <= target {
            return (text, j);
        }
    }
    unreachable!("jaccard never fell to {target}")
}

fn split_dedupe() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(20_006);
    let charts: Vec<ClinicalChart> = (0..100)
        .map(|i| {
            chart(
                &format!("c{i:03}"),
                vec![format!("note {i} {}", rng.random::<u64>())],
            )
        })
        .collect();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("manifest.json");
    let first = split(&charts, 9, Some(&path)).map_err(|e| e.to_string())?;
    let bytes = std::fs::read(&path).unwrap();
    ensure!(
        (first.train_ids.len(), first.eval_ids.len()) == (95, 5),
        "split {}/{}",
        first.train_ids.len(),
        first.eval_ids.len()
    );
    let fresh = tempfile::tempdir().unwrap();
    let again =
        split(&charts, 9, Some(&fresh.path().join("manifest.json"))).map_err(|e| e.to_string())?;
    ensure!(
        again == first && std::fs::read(fresh.path().join("manifest.json")).unwrap() == bytes,
        "rerun differs"
    );
    let mut mutated = charts.clone();
    mutated[3].lines.push("edited".into());
    ensure!(
        matches!(
            split(&mutated, 9, Some(&path)),
            Err(PrepError::ManifestConflict { .. })
        ),
        "no ManifestConflict"
    );

    let base: String = (0..600)
        .map(|_| char::from(rng.random_range(b'a'..=b'z')))
        .collect();
    let (near, j_near) = variant_at(&base, 0.90, &mut rng);
    let (half, j_half) = variant_at(&base, 0.50, &mut rng);
    let (kept, log) = dedupe(
        &[chart("a", vec![base.clone()]), chart("b", vec![near])],
        0.85,
    );
    ensure!(
        kept.len() == 1 && log.len() == 1 && log[0].removed == "b",
        "near-duplicate (J={j_near:.3}) kept"
    );
    let (kept, _) = dedupe(&[chart("a", vec![base]), chart("b", vec![half])], 0.85);
    ensure!(
        kept.len() == 2,
        "50% overlap pair (J={j_half:.3}) was removed"
    );
    Ok(format!(
        "95/5 stable; conflict on mutation; J={j_near:.3} removed, J={j_half:.3} kept"
    ))
}

// ---------------------------------------------------------------- IQR

fn iqr_fixture() -> Outcome {
    let f1s = [0.90, 0.88, 0.87, 0.86, 0.85, 0.50];
    let mut scores: Vec<CategoryScore> = f1s
        .iter()
        .enumerate()
        .map(|(i, &f1)| CategoryScore {
            category: format!("K{i}"),
            f1,
            eval_count: 12,
        })
        .collect();
    // Hand computation: sorted .50 .85 .86 .87 .88 .90, positions 1.25 and 3.75.
    let (q1, q3) = (0.85 + 0.25 * 0.01, 0.87 + 0.75 * 0.01);
    let bound = q1 - 1.5 * (q3 - q1);
    let r = iqr_outliers(&scores, 10);
    ensure!(
        close(r.q1.unwrap_or(f64::NAN), q1, 1e-12) && close(r.q3.unwrap_or(f64::NAN), q3, 1e-12),
        "quartiles {:?} {:?}",
        r.q1,
        r.q3
    );
    ensure!(
        close(r.lower_bound.unwrap_or(f64::NAN), bound, 1e-12),
        "bound {:?}",
        r.lower_bound
    );
    let flagged: Vec<&str> = r.outliers.iter().map(|o| o.category.as_str()).collect();
    ensure!(flagged == ["K5"], "flagged {flagged:?}");
    scores.push(CategoryScore {
        category: "NINE".into(),
        f1: 0.01,
        eval_count: 9,
    });
    let r = iqr_outliers(&scores, 10);
    ensure!(
        r.eligible == 6 && r.outliers.iter().all(|o| o.category != "NINE"),
        "9-case category not filtered"
    );
    Ok(format!(
        "bound {bound:.4}; only 0.50 flagged; 9-case category excluded"
    ))
}

// ---------------------------------------------------------------- expert eval

fn assignment(code: &str, ev: &[usize]) -> CodeAssignment {
    CodeAssignment {
        code: code.into(),
        rationale: format!("documented {code}"),
        evidence_lines: ev.iter().copied().collect(),
        source: AssignmentSource::Gold,
    }
}

fn record(id: &str, codes: &[&str]) -> LabelRecord {
    LabelRecord {
        chart_id: id.into(),
        assignments: codes.iter().map(|c| assignment(c, &[0])).collect(),
    }
}

fn expert_eval() -> Outcome {
    let expert = vec![
        record("a", &["Z59.0", "R54"]),
        record("b", &["I50.9"]),
        record("c", &["Z60.2"]),
        record("d", &["N18.3", "Z66"]),
        record("e", &["R54", "Z59.1", "I50.22"]),
    ];
    // In-domain extras per chart, plus out-of-domain codes the filter must drop.
    let extras: [(&[&str], &[&str]); 5] = [
        (&["Z59.1", "R26.81"], &["E11.9"]),
        (&["J44.9"], &[]),
        (&["Z59.0", "R54", "R53.81"], &["I10", "E78.5"]),
        (&[], &["I10"]),
        (&["Z60.2"], &[]),
    ];
    let domains = bundled::domain_sets();
    let preds: Vec<LabelRecord> = expert
        .iter()
        .zip(&extras)
        .map(|(e, (inside, outside))| {
            let mut codes: Vec<&str> = e.assignments.iter().map(|a| a.code.as_str()).collect();
            codes.extend(inside.iter().chain(outside.iter()));
            record(&e.chart_id, &codes)
        })
        .collect();
    let charts: Vec<ClinicalChart> = expert
        .iter()
        .map(|r| chart(&r.chart_id, (0..4).map(|i| format!("line {i}")).collect()))
        .collect();
    let corpus = ReviewCorpus::new(charts, expert.clone()).map_err(|e| e.to_string())?;
    let events: Vec<ReviewDecision> = expert
        .iter()
        .flat_map(|r| {
            r.assignments.iter().map(move |a| ReviewDecision {
                chart_id: r.chart_id.clone(),
                code: mcf_review::label_key(&a.code),
                reviewer_id: "r1".into(),
                verdict: Verdict::Accept,
                reason: None,
                decided_at: "2026-01-01T00:00:00Z".into(),
                idempotency_key: None,
            })
        })
        .collect();
    let gt = export_ground_truth(
        &corpus,
        &ReviewState::replay(&events),
        &ExportMode::Latest,
        false,
    )
    .map_err(|e| e.to_string())?;

    let filtered = filter_domain(&preds, &domains);
    let dropped: usize = extras.iter().map(|(_, out)| out.len()).sum();
    ensure!(
        filtered.log.removed == dropped,
        "filter removed {}, expected {dropped}",
        filtered.log.removed
    );
    for (r, (e, (inside, _))) in filtered.records().iter().zip(expert.iter().zip(&extras)) {
        let got: BTreeSet<&str> = r.assignments.iter().map(|a| a.code.as_str()).collect();
        let want: BTreeSet<&str> = e
            .assignments
            .iter()
            .map(|a| a.code.as_str())
            .chain(inside.iter().copied())
            .collect();
        ensure!(got == want, "chart {}: kept {got:?}", r.chart_id);
    }

    let report = evaluate_expert(&filtered, &gt, MatchSemantics::Set).map_err(|e| e.to_string())?;
    ensure!(report.levels.len() == 4, "{} levels", report.levels.len());
    // Exact-code precision per chart is |expert| / (|expert| + |in-domain extras|).
    let l3: Vec<f64> = expert
        .iter()
        .zip(&extras)
        .map(|(e, (inside, _))| {
            e.assignments.len() as f64 / (e.assignments.len() + inside.len()) as f64
        })
        .collect();
    let n = l3.len() as f64;
    let mean = l3.iter().sum::<f64>() / n;
    let se = (l3.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() / n.sqrt();
    for l in &report.levels {
        ensure!(
            l.recall.mean == 1.0 && l.recall.se == 0.0,
            "{} recall {:?}",
            l.level,
            l.recall
        );
    }
    let got = &report.levels[3];
    ensure!(
        close(got.precision.mean, mean, 1e-12),
        "L3 precision {} vs analytic {mean}",
        got.precision.mean
    );
    ensure!(
        close(got.precision.se, se, 1e-12),
        "L3 precision SE {} vs hand {se}",
        got.precision.se
    );
    let sanity = mean_se(&l3);
    ensure!(
        close(sanity.se, se, 1e-12),
        "mean_se disagrees with hand SE"
    );
    Ok(format!("recall 1.0 at L0-L3; L3 precision {mean:.4} (SE {se:.4}); {dropped} out-of-domain codes removed"))
}
