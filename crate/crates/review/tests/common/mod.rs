#![allow(dead_code)]

use std::collections::BTreeSet;

use mcf_core::synth::{
    AssignmentSource, ClinicalChart, CodeAssignment, LabelRecord, Provenance, DEFAULT_CREATED_AT,
    PIPELINE_VERSION,
};
use mcf_core::taxonomy::Domain;
use mcf_review::ReviewCorpus;

pub fn chart(id: &str, n_lines: usize) -> ClinicalChart {
    ClinicalChart {
        chart_id: id.into(),
        lines: (0..n_lines).map(|i| format!("{id} line {i}")).collect(),
        seed_code: "Z59.0".into(),
        target_codes: vec!["Z59.0".into()],
        domain_tags: BTreeSet::from([Domain::SDoH]),
        provenance: Provenance {
            meta_source_id: "builtin-1".into(),
            generator_provider_id: "mock".into(),
            created_at: DEFAULT_CREATED_AT.into(),
            pipeline_version: PIPELINE_VERSION.into(),
        },
    }
}

pub fn label(code: &str, ev: &[usize]) -> CodeAssignment {
    CodeAssignment {
        code: code.into(),
        rationale: format!("documented {code}"),
        evidence_lines: ev.iter().copied().collect(),
        source: AssignmentSource::Gold,
    }
}

pub fn record(chart_id: &str, labels: Vec<CodeAssignment>) -> LabelRecord {
    LabelRecord {
        chart_id: chart_id.into(),
        assignments: labels,
    }
}

/// Five charts, ten labels.
pub fn corpus() -> ReviewCorpus {
    let charts = (1..=5).map(|i| chart(&format!("c{i}"), 6)).collect();
    let gold = vec![
        record("c1", vec![label("Z59.0", &[1]), label("I10", &[2])]),
        record(
            "c2",
            vec![
                label("R54", &[0]),
                label("E11.9", &[3]),
                label("Z60.2", &[4]),
            ],
        ),
        record("c3", vec![label("I50.9", &[1, 2])]),
        record("c4", vec![label("Z66", &[5]), label("N18.3", &[0])]),
        record("c5", vec![label("Z59.1", &[2]), label("R26.81", &[1])]),
    ];
    ReviewCorpus::new(charts, gold).unwrap()
}
