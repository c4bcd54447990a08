#![allow(dead_code)]

use ivos_core::{
    build_classification_tasks, build_forecast_tasks, generate_cohort, CriteriaSet, GeneratorConfig, Measurement,
    PlausibleRanges, Task, TaskConfig, VitalKind, MAX_ENCOUNTER_HOURS,
};

pub fn small_cohort_tasks(n_encounters: usize, seed: u64) -> (Vec<Task>, Vec<Task>) {
    let cfg = GeneratorConfig {
        n_encounters,
        seed,
        ..GeneratorConfig::default()
    };
    let cohort = generate_cohort(&cfg).unwrap().preprocess(&PlausibleRanges::default(), MAX_ENCOUNTER_HOURS);
    let tcfg = TaskConfig::default();
    (
        build_forecast_tasks(&cohort, &tcfg, seed),
        build_classification_tasks(&cohort, &tcfg, &CriteriaSet::strict()),
    )
}

/// A hand-made task with a few measurements of each vital.
pub fn toy_task(tau: f64) -> Task {
    let mut context = Vec::new();
    for (i, kind) in VitalKind::ALL.into_iter().enumerate() {
        let base = [85.0, 18.0, 96.0, 120.0, 98.6][i];
        for j in 0..4 {
            context.push(Measurement::new(tau - 40.0 + 9.0 * j as f64 + i as f64, kind, base + j as f64));
        }
    }
    context.sort_by(|a, b| a.t_hours.total_cmp(&b.t_hours));
    let targets = vec![
        Measurement::new(tau + 1.0, VitalKind::HeartRate, 90.0),
        Measurement::new(tau + 4.25, VitalKind::Spo2, 95.0),
        Measurement::new(tau + 11.5, VitalKind::Temperature, 99.1),
    ];
    Task {
        encounter_id: "toy".into(),
        tau_hours: tau,
        context,
        targets,
        label: Some(true),
        day_key: chrono::NaiveDate::from_ymd_opt(2023, 1, 2).unwrap(),
    }
}
