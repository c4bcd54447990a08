#![allow(dead_code)]

use std::path::Path;

use ivos_core::GeneratorConfig;
use ivos_service::PipelineConfig;

/// Small cohort: enough test days with ten or more active tasks.
pub fn small_generator() -> GeneratorConfig {
    GeneratorConfig {
        n_encounters: 160,
        admit_window_days: 40,
        seed: 11,
        ..GeneratorConfig::default()
    }
}

/// Pipeline config over `dir` with the tiny preset and a reduced GBDT grid.
pub fn small_config_json(dir: &Path) -> String {
    let gen = dir.join("generator.json");
    std::fs::write(&gen, serde_json::to_string(&small_generator()).unwrap()).unwrap();
    serde_json::json!({
        "paths": {
            "generator": "generator.json",
            "cohort": "cohort.jsonl",
            "checkpoint_dir": "ckpt",
            "report_dir": "report"
        },
        "model_preset": "tiny",
        "criteria": "strict",
        "rerun_criteria": "loose",
        "seed": 5,
        "split": {"test_cutoff": "2021-01-28", "val_fraction": 0.2},
        "bootstrap_iterations": 50,
        "gbdt_grid": {"n_estimators": [5, 10], "max_depth": [2, 3], "learning_rate": [0.1]},
        "forecast_max_rows": 2000
    })
    .to_string()
}

pub fn small_config(dir: &Path) -> PipelineConfig {
    let text = small_config_json(dir);
    let path = dir.join("pipeline.json");
    std::fs::write(&path, text).unwrap();
    let mut cfg = PipelineConfig::from_json(&std::fs::read_to_string(&path).unwrap()).unwrap();
    cfg.resolve_relative(dir);
    cfg.validate().unwrap();
    cfg
}
