use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::synth::CodeAssignment;
use crate::taxonomy::{parse_icd, CodeLevel, CptCode, IcdCode, TaxonomyError};

/// Levels 0..=3 compare code prefixes; level 4 adds evidence agreement.
pub const EVIDENCE_LEVEL: u8 = 4;
pub const ICD_LEVELS: [u8; 5] = [0, 1, 2, 3, 4];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchSemantics {
    /// Repeated full codes collapse to one label (evidence unioned); the
    /// distinct codes are then paired one-to-one by prefix.
    #[default]
    Set,
    /// Repeated codes are kept and matched one-to-one.
    Multiset,
}

impl std::str::FromStr for MatchSemantics {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "set" => Ok(MatchSemantics::Set),
            "multiset" => Ok(MatchSemantics::Multiset),
            _ => Err(format!(
                "unknown match semantics {s:?} (expected set or multiset)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LevelCounts {
    pub true_pos: usize,
    pub pred_count: usize,
    pub gold_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IcdLabel {
    pub code: IcdCode,
    pub evidence: BTreeSet<usize>,
}

impl IcdLabel {
    pub fn new(
        code: &str,
        evidence: impl IntoIterator<Item = usize>,
    ) -> Result<Self, TaxonomyError> {
        Ok(Self {
            code: parse_icd(code)?,
            evidence: evidence.into_iter().collect(),
        })
    }

    pub fn from_assignment(a: &CodeAssignment) -> Result<Self, TaxonomyError> {
        Self::new(&a.code, a.evidence_lines.iter().copied())
    }

    fn key(&self, level: u8) -> &str {
        match CodeLevel::from_index(level) {
            Some(l) => self.code.truncate_to(l),
            None => self.code.normalized(),
        }
    }
}

pub fn jaccard(a: &BTreeSet<usize>, b: &BTreeSet<usize>) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let inter = a.intersection(b).count();
    inter as f64 / (a.len() + b.len() - inter) as f64
}

/// Duplicate codes merged into one label with the union of their evidence.
pub fn collapse(labels: &[IcdLabel]) -> BTreeMap<&str, BTreeSet<usize>> {
    let mut out: BTreeMap<&str, BTreeSet<usize>> = BTreeMap::new();
    for l in labels {
        out.entry(l.code.normalized())
            .or_default()
            .extend(&l.evidence);
    }
    out
}

pub fn match_level(
    pred: &[IcdLabel],
    gold: &[IcdLabel],
    level: u8,
    semantics: MatchSemantics,
) -> LevelCounts {
    assert!(level <= EVIDENCE_LEVEL, "match level {level} out of range");
    match (semantics, level) {
        (MatchSemantics::Set, EVIDENCE_LEVEL) => {
            let (p, g) = (collapse(pred), collapse(gold));
            let true_pos = p
                .iter()
                .filter(|(code, ev)| g.get(*code).is_some_and(|gev| !ev.is_disjoint(gev)))
                .count();
            LevelCounts {
                true_pos,
                pred_count: p.len(),
                gold_count: g.len(),
            }
        }
        (MatchSemantics::Set, _) => {
            let distinct = |labels: &[IcdLabel]| -> Vec<IcdLabel> {
                let mut seen = BTreeSet::new();
                labels
                    .iter()
                    .filter(|l| seen.insert(l.code.normalized()))
                    .cloned()
                    .collect()
            };
            match_level(
                &distinct(pred),
                &distinct(gold),
                level,
                MatchSemantics::Multiset,
            )
        }
        (MatchSemantics::Multiset, EVIDENCE_LEVEL) => LevelCounts {
            true_pos: max_matching(pred, gold, |a, b| {
                a.code == b.code && !a.evidence.is_disjoint(&b.evidence)
            }),
            pred_count: pred.len(),
            gold_count: gold.len(),
        },
        (MatchSemantics::Multiset, _) => {
            let mut counts: HashMap<&str, (usize, usize)> = HashMap::new();
            for l in pred {
                counts.entry(l.key(level)).or_default().0 += 1;
            }
            for l in gold {
                counts.entry(l.key(level)).or_default().1 += 1;
            }
            LevelCounts {
                true_pos: counts.values().map(|(p, g)| p.min(g)).sum(),
                pred_count: pred.len(),
                gold_count: gold.len(),
            }
        }
    }
}

/// Maximum one-to-one pairing by augmenting paths.
fn max_matching<T>(left: &[T], right: &[T], edge: impl Fn(&T, &T) -> bool) -> usize {
    fn augment<T>(
        i: usize,
        left: &[T],
        right: &[T],
        edge: &dyn Fn(&T, &T) -> bool,
        seen: &mut [bool],
        owner: &mut [Option<usize>],
    ) -> bool {
        for j in 0..right.len() {
            if seen[j] || !edge(&left[i], &right[j]) {
                continue;
            }
            seen[j] = true;
            if owner[j].is_none_or(|k| augment(k, left, right, edge, seen, owner)) {
                owner[j] = Some(i);
                return true;
            }
        }
        false
    }
    let mut owner = vec![None; right.len()];
    (0..left.len())
        .filter(|&i| {
            augment(
                i,
                left,
                right,
                &edge,
                &mut vec![false; right.len()],
                &mut owner,
            )
        })
        .count()
}

/// P, R and F1 from match counts. An empty prediction against empty gold
/// scores 1 throughout.
pub fn doc_prf(c: LevelCounts) -> Prf {
    let precision = match (c.pred_count, c.gold_count) {
        (0, 0) => 1.0,
        (0, _) => 0.0,
        (p, _) => c.true_pos as f64 / p as f64,
    };
    let recall = if c.gold_count == 0 {
        1.0
    } else {
        c.true_pos as f64 / c.gold_count as f64
    };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Prf {
        precision,
        recall,
        f1,
    }
}

/// Exact set match on CPT codes; both sides must come from one catalog version.
pub fn cpt_set_match(
    pred: &[CptCode],
    gold: &[CptCode],
    pred_version: &str,
    gold_version: &str,
) -> Result<LevelCounts, EvalError> {
    if pred_version != gold_version {
        return Err(EvalError::CatalogDrift {
            gold: gold_version.to_string(),
            pred: pred_version.to_string(),
        });
    }
    let p: BTreeSet<&str> = pred.iter().map(CptCode::as_str).collect();
    let g: BTreeSet<&str> = gold.iter().map(CptCode::as_str).collect();
    Ok(LevelCounts {
        true_pos: p.intersection(&g).count(),
        pred_count: p.len(),
        gold_count: g.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocEval {
    pub chart_id: String,
    /// One entry per level, indexed by level (ICD) or a single entry (CPT).
    pub levels: Vec<LevelCounts>,
    /// Mean evidence Jaccard over exactly matched codes; absent when none matched.
    pub jaccard_mean: Option<f64>,
    pub no_valid_prediction: bool,
    pub duplicate_predictions: usize,
}

pub fn evaluate_icd_doc(
    chart_id: &str,
    pred: &[IcdLabel],
    gold: &[IcdLabel],
    semantics: MatchSemantics,
) -> DocEval {
    let levels = ICD_LEVELS
        .iter()
        .map(|&l| match_level(pred, gold, l, semantics))
        .collect();
    let (p, g) = (collapse(pred), collapse(gold));
    let scores: Vec<f64> = p
        .iter()
        .filter_map(|(code, ev)| g.get(code).map(|gev| jaccard(ev, gev)))
        .collect();
    DocEval {
        chart_id: chart_id.to_string(),
        levels,
        jaccard_mean: (!scores.is_empty())
            .then(|| scores.iter().sum::<f64>() / scores.len() as f64),
        no_valid_prediction: pred.is_empty(),
        duplicate_predictions: pred.len() - p.len(),
    }
}

pub fn evaluate_cpt_doc(
    chart_id: &str,
    pred: &[CptCode],
    gold: &[CptCode],
    version: &str,
) -> DocEval {
    let counts = cpt_set_match(pred, gold, version, version).expect("same version");
    let distinct: BTreeSet<&str> = pred.iter().map(CptCode::as_str).collect();
    DocEval {
        chart_id: chart_id.to_string(),
        levels: vec![counts],
        jaccard_mean: None,
        no_valid_prediction: pred.is_empty(),
        duplicate_predictions: pred.len() - distinct.len(),
    }
}
