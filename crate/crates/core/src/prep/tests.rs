use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::gateway::{validate_schema, Payload, SchemaId};
use crate::synth::{
    AssignmentSource, CodeAssignment, Provenance, DEFAULT_CREATED_AT, PIPELINE_VERSION,
};
use crate::taxonomy::Domain;

fn chart(id: &str, lines: &[&str]) -> ClinicalChart {
    ClinicalChart {
        chart_id: id.into(),
        lines: lines.iter().map(|s| s.to_string()).collect(),
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

fn label(code: &str, ev: &[usize]) -> CodeAssignment {
    CodeAssignment {
        code: code.into(),
        rationale: format!("documented {code}"),
        evidence_lines: ev.iter().copied().collect(),
        source: AssignmentSource::Gold,
    }
}

fn note(id: &str, n_lines: usize, labels: Vec<CodeAssignment>) -> LabeledNote {
    LabeledNote {
        origin_chart_ids: vec![id.into()],
        lines: (0..n_lines).map(|i| format!("{id} line {i}")).collect(),
        assignments: labels,
    }
}

fn many_charts(n: usize) -> Vec<ClinicalChart> {
    (0..n)
        .map(|i| chart(&format!("c{i:03}"), &[&format!("note {i} body")]))
        .collect()
}

const UNIQUE62: &str = "abcdefghijklmnopqrstuvwxyz0123456789ABCDEFGHIJKLMNOPQRSTUVWXYZ";

#[test]
fn identical_charts_keep_first() {
    let a = chart("a", &["Patient with hypertension."]);
    let b = chart("b", &["Patient with hypertension."]);
    let (kept, log) = dedupe(&[b, a], 0.85);
    assert_eq!(kept.len(), 1);
    assert_eq!(kept[0].chart_id, "a");
    assert_eq!(
        log,
        vec![Removal {
            removed: "b".into(),
            duplicate_of: "a".into(),
            similarity: 1.0
        }]
    );
}

#[test]
fn disjoint_charts_both_kept() {
    let (kept, log) = dedupe(
        &[chart("a", &["aaaaaaaa"]), chart("b", &["bbbbbbbb"])],
        0.85,
    );
    assert_eq!(kept.len(), 2);
    assert!(log.is_empty());
}

#[test]
fn near_duplicate_removed_at_default_threshold() {
    // 62 distinct characters give 58 distinct 5-grams. Replacing the last 3
    // characters leaves the 55 shingles that end before them shared, so
    // Jaccard = 55 / (58 + 58 - 55) = 55 / 61.
    let c_text = format!("{}!#%", &UNIQUE62[..59]);
    let (kept, log) = dedupe(&[chart("a", &[UNIQUE62]), chart("c", &[&c_text])], 0.85);
    assert_eq!(kept.len(), 1);
    assert_eq!(log[0].removed, "c");
    assert!((log[0].similarity - 55.0 / 61.0).abs() < 1e-12);

    // Replacing 20 characters: 38 / 78 shared, below the threshold.
    let far = format!("{}{}", &UNIQUE62[..42], "!#%&()*+,-/:;<=>?@[]");
    let (kept, _) = dedupe(&[chart("a", &[UNIQUE62]), chart("c", &[&far])], 0.85);
    assert_eq!(kept.len(), 2);
    assert!(
        (jaccard_sets(&char_shingles(&[UNIQUE62.into()]), &char_shingles(&[far])) - 38.0 / 78.0)
            .abs()
            < 1e-12
    );
}

#[test]
fn split_counts_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let charts = many_charts(100);
    let m = split(&charts, 7, None).unwrap();
    assert_eq!((m.train_ids.len(), m.eval_ids.len()), (95, 5));
    assert_eq!(split(&charts, 7, None).unwrap(), m);
    let mut reversed = charts.clone();
    reversed.reverse();
    assert_eq!(split(&reversed, 7, None).unwrap(), m);
    assert_ne!(split(&charts, 8, None).unwrap().eval_ids, m.eval_ids);

    let m21 = split(&many_charts(21), 7, None).unwrap();
    assert_eq!((m21.train_ids.len(), m21.eval_ids.len()), (20, 1));
    assert!(matches!(
        split(&many_charts(19), 7, None),
        Err(PrepError::TooFewCharts { n: 19, .. })
    ));

    let path = dir.path().join(MANIFEST_FILE);
    let stored = split(&charts, 7, Some(&path)).unwrap();
    // A different seed still returns the stored manifest for the same corpus.
    assert_eq!(split(&charts, 99, Some(&path)).unwrap(), stored);
    let mut mutated = charts.clone();
    mutated[3].lines[0].push_str(" edited");
    assert!(matches!(
        split(&mutated, 7, Some(&path)),
        Err(PrepError::ManifestConflict { .. })
    ));
}

#[test]
fn augment_offsets_b_evidence() {
    let a = note("a", 10, vec![label("I10", &[0])]);
    let b = note("b", 4, vec![label("E78.5", &[2])]);
    let c = concat_pair(&a, &b);
    assert_eq!(c.origin_chart_ids, vec!["a", "b"]);
    assert_eq!(c.lines.len(), 14);
    let b_label = c.assignments.iter().find(|x| x.code == "E78.5").unwrap();
    assert_eq!(b_label.evidence_lines, BTreeSet::from([12]));
}

#[test]
fn augment_merges_shared_code() {
    let a = note("a", 10, vec![label("E11.9", &[1])]);
    let b = note("b", 3, vec![label("E11.9", &[0])]);
    let c = concat_pair(&a, &b);
    assert_eq!(c.assignments.len(), 1);
    assert_eq!(c.assignments[0].evidence_lines, BTreeSet::from([1, 10]));
}

#[test]
fn augment_fraction_counts() {
    let notes: Vec<LabeledNote> = (0..100)
        .map(|i| note(&format!("n{i:03}"), 3, vec![label("I10", &[1])]))
        .collect();
    let tok = WhitespaceTokenizer::default();
    let pack = TemplatePack::bundled();
    let (out, report) = augment(
        &notes,
        0.30,
        1,
        AugmentMode::Replace,
        CorpusKind::Icd,
        &pack,
        &tok,
        DEFAULT_MAX_LEN,
    );
    assert_eq!(report.formed_pairs, 15);
    assert_eq!(out.len(), 85);
    assert_eq!(
        out.iter().filter(|n| n.origin_chart_ids.len() == 2).count(),
        15
    );
    let mut ids: Vec<&String> = out.iter().flat_map(|n| &n.origin_chart_ids).collect();
    ids.sort();
    ids.dedup();
    assert_eq!(ids.len(), 100);

    let (added, _) = augment(
        &notes,
        0.30,
        1,
        AugmentMode::Add,
        CorpusKind::Icd,
        &pack,
        &tok,
        DEFAULT_MAX_LEN,
    );
    assert_eq!(added.len(), 115);
}

#[test]
fn augment_skips_oversized_pairs_and_underfills() {
    let tok = WhitespaceTokenizer::default();
    let pack = TemplatePack::bundled();
    let notes: Vec<LabeledNote> = (0..10)
        .map(|i| note(&format!("n{i}"), 40, vec![]))
        .collect();
    let single = notes[0].render(CorpusKind::Icd, &pack, &tok).token_count;
    // Room for one note but never for two.
    let (out, report) = augment(
        &notes,
        1.0,
        3,
        AugmentMode::Replace,
        CorpusKind::Icd,
        &pack,
        &tok,
        single + 5,
    );
    assert_eq!(report.requested_pairs, 5);
    assert_eq!(report.formed_pairs, 0);
    assert!(report.underfilled);
    assert!(report.oversized_draws > 0);
    assert_eq!(out, notes);
}

#[test]
fn render_empty_and_round_trip() {
    let tok = WhitespaceTokenizer::default();
    let pack = TemplatePack::bundled();
    let lines = vec![
        "HPI: follow-up".to_string(),
        "Type 2 diabetes mellitus, controlled.".to_string(),
    ];
    let empty = render_prompt(vec!["c1".into()], &lines, &[], CorpusKind::Icd, &pack, &tok);
    assert_eq!(empty.target_text, "[]");
    assert!(empty
        .prompt_text
        .ends_with("[0] HPI: follow-up\n[1] Type 2 diabetes mellitus, controlled."));
    assert!(empty.prompt_text.starts_with(&pack.system));

    let s = render_prompt(
        vec!["c1".into()],
        &lines,
        &[label("E11.9", &[1])],
        CorpusKind::Icd,
        &pack,
        &tok,
    );
    match validate_schema(SchemaId::IcdAssignments, &s.target_text).unwrap() {
        Payload::IcdAssignments(v) => {
            assert_eq!(v.len(), 1);
            assert_eq!(v[0].code, "E11.9");
            assert_eq!(v[0].evidence.line_index, vec![1]);
        }
        other => panic!("unexpected payload {other:?}"),
    }
    let again = render_prompt(
        vec!["c1".into()],
        &lines,
        &[label("E11.9", &[1])],
        CorpusKind::Icd,
        &pack,
        &tok,
    );
    assert_eq!(again, s);
    assert_ne!(again.sample_id, empty.sample_id);
    assert_eq!(
        s.token_count,
        tok.count(&format!("{}\n{}", s.prompt_text, s.target_text))
    );

    let cpt = render_prompt(
        vec!["c1".into()],
        &lines,
        &[label("93000", &[])],
        CorpusKind::Cpt,
        &pack,
        &tok,
    );
    assert!(validate_schema(SchemaId::CptAssignments, &cpt.target_text).is_ok());
}

#[test]
fn template_pack_load_and_missing() {
    let dir = tempfile::tempdir().unwrap();
    assert!(
        matches!(TemplatePack::load(dir.path()), Err(PrepError::TemplateMissing(p)) if p.ends_with("VERSION"))
    );
    let b = TemplatePack::bundled();
    std::fs::write(dir.path().join("VERSION"), format!("{}\n", b.version)).unwrap();
    std::fs::write(dir.path().join("system.txt"), &b.system).unwrap();
    std::fs::write(dir.path().join("instruction_icd.txt"), &b.instruction_icd).unwrap();
    assert!(matches!(
        TemplatePack::load(dir.path()),
        Err(PrepError::TemplateMissing(p)) if p.ends_with("instruction_cpt.txt")
    ));
    std::fs::write(dir.path().join("instruction_cpt.txt"), &b.instruction_cpt).unwrap();
    assert_eq!(TemplatePack::load(dir.path()).unwrap(), b);
}

fn sized(id: &str, len: usize) -> TokenizedSample {
    TokenizedSample {
        sample_id: id.into(),
        tokens: (0..len as u32).map(|i| 2 + i % 1000).collect(),
    }
}

#[test]
fn next_fit_groups_by_budget() {
    let samples = [
        sized("a", 4000),
        sized("b", 3000),
        sized("c", 2000),
        sized("d", 1000),
    ];
    let seqs = pack(&samples, PackConfig::default()).unwrap();
    let groups: Vec<Vec<&str>> = seqs
        .iter()
        .map(|s| s.segments.iter().map(|g| g.sample_id.as_str()).collect())
        .collect();
    assert_eq!(groups, vec![vec!["a", "b"], vec!["c", "d"]]);
    // a + delimiter + b, then c + delimiter + d.
    assert_eq!(seqs[0].token_ids.len(), 7001);
    assert_eq!(
        seqs[0].segments[1],
        Segment {
            sample_id: "b".into(),
            start: 4001,
            end: 7001
        }
    );
    assert_eq!(seqs[0].token_ids[4000], 1);
    assert_eq!(seqs[1].token_ids.len(), 3001);
    assert_eq!(seqs[0].position_ids[4001], 0);
    assert_eq!(seqs[0].position_ids[4000], 4000);
}

#[test]
fn pack_boundaries() {
    let seqs = pack(&[sized("full", 8192)], PackConfig::default()).unwrap();
    assert_eq!(seqs.len(), 1);
    assert_eq!(seqs[0].token_ids.len(), 8192);
    assert!(!seqs[0].token_ids.contains(&1));
    assert!(matches!(
        pack(&[sized("big", 8193)], PackConfig::default()),
        Err(PrepError::OversizedSample {
            tokens: 8193,
            max_len: 8192,
            ..
        })
    ));
    assert!(matches!(
        pack(&[sized("e", 0)], PackConfig::default()),
        Err(PrepError::EmptySample(_))
    ));
    assert!(pack(&[], PackConfig::default()).unwrap().is_empty());
    assert!(unpack_all(&[], 1).unwrap().is_empty());
}

#[test]
fn unpack_detects_tampering() {
    let samples = [sized("s1", 10), sized("s2", 7)];
    let seqs = pack(&samples, PackConfig::default()).unwrap();
    assert_eq!(unpack(&seqs[0], 1).unwrap(), samples.to_vec());
    let mut bad = seqs[0].clone();
    bad.segments[0].end = 9;
    assert!(matches!(
        unpack(&bad, 1),
        Err(PrepError::CorruptSegments(_))
    ));
    let mut bad = seqs[0].clone();
    bad.segments[1].end = 17;
    assert!(matches!(
        unpack(&bad, 1),
        Err(PrepError::CorruptSegments(_))
    ));
    let mut bad = seqs[0].clone();
    bad.position_ids[12] = 0;
    assert!(matches!(
        unpack(&bad, 1),
        Err(PrepError::CorruptSegments(_))
    ));
}

#[test]
fn efficiency_is_token_share() {
    let seqs = pack(&[sized("a", 4000), sized("b", 3000)], PackConfig::default()).unwrap();
    assert!((packing_efficiency(&seqs, 8192) - 7000.0 / 8192.0).abs() < 1e-12);
}

fn write_corpus(dir: &Path, n: usize) {
    let mut charts = Vec::new();
    let mut gold = Vec::new();
    for i in 0..n {
        let id = format!("icd-{i:05}");
        let mut rng = ChaCha8Rng::seed_from_u64(i as u64);
        let filler: String = (0..120)
            .map(|_| rng.random_range(b'a'..=b'z') as char)
            .collect();
        charts.push(chart(
            &id,
            &[
                &format!("HPI: {filler}"),
                "Assessment: essential hypertension, stable",
                "Plan: continue",
            ],
        ));
        gold.push(LabelRecord {
            chart_id: id,
            assignments: vec![label("I10", &[1])],
        });
    }
    // Exact copy of the first chart, removed by dedupe.
    let mut dup = charts[0].clone();
    dup.chart_id = "icd-99999".into();
    charts.push(dup);
    gold.push(LabelRecord {
        chart_id: "icd-99999".into(),
        assignments: vec![label("I10", &[1])],
    });
    // Chart without gold labels is skipped.
    charts.push(chart("icd-88888", &["Unlabeled"]));
    write_jsonl(&dir.join(CHARTS_FILE), &charts).unwrap();
    write_jsonl(&dir.join(GOLD_FILE), &gold).unwrap();
}

#[test]
fn prepare_writes_all_outputs() {
    let corpus = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    write_corpus(corpus.path(), 40);
    let mut cfg = PrepConfig::new(CorpusKind::Icd, corpus.path(), out.path());
    cfg.split_seed = 5;
    let report = prepare(&cfg).unwrap();
    assert_eq!(report.charts_in, 42);
    assert_eq!(report.unlabeled_skipped, 1);
    assert_eq!(report.duplicates_removed, 1);
    assert_eq!((report.train_charts, report.eval_charts), (38, 2));
    let aug = report.augment.clone().unwrap();
    assert_eq!(aug.formed_pairs, 5);
    assert_eq!(report.train_samples, 33);
    assert_eq!(report.eval_samples, 2);

    let train: Vec<TrainingSample> = read_jsonl(&out.path().join(TRAIN_FILE)).unwrap();
    let packed = read_packed(&out.path().join(PACKED_FILE)).unwrap();
    let mut recovered: Vec<String> = unpack_all(&packed, 1)
        .unwrap()
        .into_iter()
        .map(|s| s.sample_id)
        .collect();
    let mut ids: Vec<String> = train.iter().map(|s| s.sample_id.clone()).collect();
    recovered.sort();
    ids.sort();
    assert_eq!(recovered, ids);
    assert!(report.packing_efficiency > 0.0 && report.packing_efficiency <= 1.0);

    let first = std::fs::read_to_string(out.path().join(PACKED_FILE)).unwrap();
    prepare(&cfg).unwrap();
    assert_eq!(
        std::fs::read_to_string(out.path().join(PACKED_FILE)).unwrap(),
        first
    );
}

fn text_strategy() -> impl Strategy<Value = String> {
    prop::collection::vec("[a-z]{1,8}[.,:]?", 1..60).prop_map(|w| w.join(" "))
}

fn check_packing(
    tok: &dyn Tokenizer,
    texts: &[String],
    max_len: usize,
) -> Result<(), TestCaseError> {
    let samples: Vec<TokenizedSample> = texts
        .iter()
        .enumerate()
        .map(|(i, t)| TokenizedSample {
            sample_id: format!("s{i}"),
            tokens: tok.encode(t),
        })
        .filter(|s| !s.tokens.is_empty() && s.tokens.len() <= max_len)
        .collect();
    let cfg = PackConfig {
        max_len,
        delimiter_id: 1,
    };
    let seqs = pack(&samples, cfg).unwrap();
    for s in &seqs {
        prop_assert!(s.token_ids.len() <= max_len);
        // Position ids restart exactly at segment starts.
        let starts: Vec<usize> = s
            .position_ids
            .iter()
            .enumerate()
            .filter(|(_, &p)| p == 0)
            .map(|(i, _)| i)
            .collect();
        prop_assert_eq!(
            starts,
            s.segments.iter().map(|g| g.start).collect::<Vec<_>>()
        );
        for w in s.position_ids.windows(2) {
            prop_assert!(w[1] == 0 || w[1] == w[0] + 1);
        }
    }
    prop_assert_eq!(unpack_all(&seqs, 1).unwrap(), samples);
    Ok(())
}

proptest! {
    #[test]
    fn packing_invariants_any_tokenizer(texts in prop::collection::vec(text_strategy(), 0..30), max_len in 50usize..600) {
        check_packing(&WhitespaceTokenizer::default(), &texts, max_len)?;
        check_packing(&ByteTokenizer, &texts, max_len)?;
    }

    #[test]
    fn split_is_exact_partition(n in 20usize..150, seed in any::<u64>()) {
        let charts = many_charts(n);
        let m = split(&charts, seed, None).unwrap();
        // Train rounds up, so eval is the floor of 5%.
        prop_assert_eq!(m.eval_ids.len(), (n as f64 * 0.05).floor() as usize);
        let mut all: Vec<String> = m.train_ids.iter().chain(&m.eval_ids).cloned().collect();
        all.sort();
        all.dedup();
        prop_assert_eq!(all.len(), n);
    }

    #[test]
    fn composite_evidence_points_at_same_text(
        la in 1usize..15, lb in 1usize..15,
        ea in prop::collection::btree_set(0usize..15, 0..4),
        eb in prop::collection::btree_set(0usize..15, 0..4),
        same_code in any::<bool>(),
    ) {
        let ea: Vec<usize> = ea.into_iter().filter(|&i| i < la).collect();
        let eb: Vec<usize> = eb.into_iter().filter(|&i| i < lb).collect();
        let a = note("a", la, vec![label("E11.9", &ea)]);
        let b = note("b", lb, vec![label(if same_code { "E11.9" } else { "I10" }, &eb)]);
        let c = concat_pair(&a, &b);
        let mut expected: BTreeSet<String> = ea.iter().map(|&i| a.lines[i].clone()).collect();
        if !same_code {
            let b_lab = c.assignments.iter().find(|x| x.code == "I10").unwrap();
            let got: BTreeSet<String> = b_lab.evidence_lines.iter().map(|&i| c.lines[i].clone()).collect();
            prop_assert_eq!(got, eb.iter().map(|&i| b.lines[i].clone()).collect::<BTreeSet<_>>());
        } else {
            expected.extend(eb.iter().map(|&i| b.lines[i].clone()));
        }
        let a_lab = c.assignments.iter().find(|x| x.code == "E11.9").unwrap();
        let got: BTreeSet<String> = a_lab.evidence_lines.iter().map(|&i| c.lines[i].clone()).collect();
        prop_assert_eq!(got, expected);
    }
}
