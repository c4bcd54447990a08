//! The committed golden generator config must keep reproducing the frozen
//! cohort summary and task counts.

use std::path::PathBuf;

use ivos_core::{
    build_classification_tasks, describe_cohort, generate_cohort, CohortSummary, CriteriaSet, GeneratorConfig,
    PlausibleRanges, TaskConfig, VitalKind, MAX_ENCOUNTER_HOURS,
};
use serde::Deserialize;

#[derive(Debug, Deserialize)]
struct Golden {
    summary: CohortSummary,
    strict_tasks: usize,
    strict_positives: usize,
    loose_positives: usize,
}

fn repo_file(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join(rel)
}

#[test]
fn golden_config_reproduces_frozen_summary() {
    let cfg: GeneratorConfig =
        serde_json::from_str(&std::fs::read_to_string(repo_file("../../configs/golden.json")).unwrap()).unwrap();
    assert_eq!(cfg, GeneratorConfig::default(), "golden config and defaults diverged");
    let golden: Golden =
        serde_json::from_str(&std::fs::read_to_string(repo_file("tests/fixtures/golden_summary.json")).unwrap())
            .unwrap();

    let cohort = generate_cohort(&cfg).unwrap().preprocess(&PlausibleRanges::default(), MAX_ENCOUNTER_HOURS);
    let summary = describe_cohort(&cohort).unwrap();
    let tcfg = TaskConfig::default();
    let strict = build_classification_tasks(&cohort, &tcfg, &CriteriaSet::strict());
    let loose = build_classification_tasks(&cohort, &tcfg, &CriteriaSet::loose());
    let positives = |ts: &[ivos_core::Task]| ts.iter().filter(|t| t.label == Some(true)).count();
    assert_eq!(summary.n_encounters, golden.summary.n_encounters);
    assert_eq!(summary.n_iv_orders, golden.summary.n_iv_orders);
    assert_eq!(summary.n_oral_orders, golden.summary.n_oral_orders);
    assert!((summary.mean_length_hours - golden.summary.mean_length_hours).abs() < 1e-9);
    for kind in VitalKind::ALL {
        let (a, b) = (
            summary.mean_measurements_per_admission[kind],
            golden.summary.mean_measurements_per_admission[kind],
        );
        assert!((a - b).abs() < 1e-9, "{kind}: {a} vs {b}");
    }

    assert_eq!(strict.len(), golden.strict_tasks);
    assert_eq!(positives(&strict), golden.strict_positives);
    assert_eq!(positives(&loose), golden.loose_positives);
    let rate = golden.strict_positives as f64 / golden.strict_tasks as f64;
    assert!((0.15..=0.60).contains(&rate), "positive rate {rate}");
}
