//! Pipeline stages: cohort generation and loading, task construction,
//! model fitting and checkpoint I/O.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use anyhow::{bail, Context, Result};
use ivos_baselines::{
    extract_features, train_gbdt_classifier, train_gbdt_regressor, train_logistic, ForecastRows, GbdtModel,
    LogisticModel, C_GRID,
};
use ivos_convcnp::{
    grid_search, head_search_space, train, train_cls_head, ClassificationHead, TrainedModel, HEAD_SIDECAR_FILE,
    SIDECAR_FILE,
};
use ivos_core::{
    build_classification_tasks, build_forecast_tasks, generate_cohort, parse_cohort, temporal_split, write_cohort,
    CohortDataset, CohortSummary, CriteriaSet, PlausibleRanges, Splits, Task, TaskConfig, MAX_ENCOUNTER_HOURS,
};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::{CriteriaChoice, PipelineConfig};

/// Generates the synthetic cohort and writes it as JSONL.
pub fn synth(cfg: &PipelineConfig) -> Result<CohortSummary> {
    let gen = cfg.generator_config()?;
    let cohort = generate_cohort(&gen)?;
    if let Some(dir) = cfg.paths.cohort.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let out = File::create(&cfg.paths.cohort).with_context(|| format!("creating {}", cfg.paths.cohort.display()))?;
    write_cohort(&cohort, BufWriter::new(out))?;
    Ok(ivos_core::describe_cohort(&cohort)?)
}

pub fn load_cohort(cfg: &PipelineConfig) -> Result<CohortDataset> {
    let path = &cfg.paths.cohort;
    let file = File::open(path)
        .with_context(|| format!("cannot open cohort {}; run `ivos synth` first", path.display()))?;
    let raw = parse_cohort(BufReader::new(file), &path.display().to_string())?;
    Ok(raw.preprocess(&PlausibleRanges::default(), MAX_ENCOUNTER_HOURS))
}

pub fn load_splits(cfg: &PipelineConfig) -> Result<Splits> {
    let cohort = load_cohort(cfg)?;
    Ok(temporal_split(&cohort, cfg.split.test_cutoff, cfg.split.val_fraction, cfg.seed)?)
}

#[derive(Debug, Clone, Default)]
pub struct TaskSets {
    pub train: Vec<Task>,
    pub val: Vec<Task>,
    pub test: Vec<Task>,
}

impl TaskSets {
    pub fn forecast(splits: &Splits, task: &TaskConfig, seed: u64) -> Self {
        TaskSets {
            train: build_forecast_tasks(&splits.train, task, seed),
            val: build_forecast_tasks(&splits.val, task, seed),
            test: build_forecast_tasks(&splits.test, task, seed),
        }
    }

    pub fn classification(splits: &Splits, task: &TaskConfig, criteria: &CriteriaSet) -> Self {
        TaskSets {
            train: build_classification_tasks(&splits.train, task, criteria),
            val: build_classification_tasks(&splits.val, task, criteria),
            test: build_classification_tasks(&splits.test, task, criteria),
        }
    }
}

pub fn labels(tasks: &[Task]) -> Vec<bool> {
    tasks.iter().map(|t| t.label == Some(true)).collect()
}

pub fn feature_rows(tasks: &[Task], lookback_hours: f64) -> Vec<Vec<f64>> {
    tasks.iter().map(|t| extract_features(t, lookback_hours)).collect()
}

/// Fits the forecaster on forecasting tasks, by grid search when configured.
pub fn train_forecaster(cfg: &PipelineConfig, tasks: &TaskSets) -> Result<TrainedModel> {
    let model_cfg = cfg.model_config()?;
    let model = if cfg.grid_search {
        grid_search(&model_cfg.search_space(), &tasks.train, &tasks.val, cfg.seed)?
    } else {
        train(&tasks.train, &tasks.val, &model_cfg, cfg.seed)?
    };
    Ok(model)
}

pub fn tune_head(cfg: &PipelineConfig, base: &TrainedModel, tasks: &TaskSets) -> Result<ClassificationHead> {
    Ok(train_cls_head(
        base,
        &tasks.train,
        &tasks.val,
        &head_search_space(&base.config),
        cfg.seed,
    )?)
}

/// Feature-based classifiers for one criteria set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classifiers {
    pub logistic: LogisticModel,
    pub gbdt: GbdtModel,
}

pub fn train_classifiers(cfg: &PipelineConfig, tasks: &TaskSets) -> Result<Classifiers> {
    let lookback = cfg.task.lookback_hours;
    let (x, y) = (feature_rows(&tasks.train, lookback), labels(&tasks.train));
    let (vx, vy) = (feature_rows(&tasks.val, lookback), labels(&tasks.val));
    let logistic = train_logistic(&x, &y, &vx, &vy, &C_GRID)?;
    let gbdt = train_gbdt_classifier(&x, &y, &vx, &vy, &cfg.gbdt_grid)?;
    Ok(Classifiers { logistic, gbdt })
}

/// Forecasting GBDT on a seeded subsample of the target rows.
pub fn train_forecast_gbdt(cfg: &PipelineConfig, tasks: &TaskSets) -> Result<GbdtModel> {
    let lookback = cfg.task.lookback_hours;
    let train_rows = ForecastRows::from_tasks(&tasks.train, lookback).subsample(cfg.forecast_max_rows, cfg.seed);
    let val_rows =
        ForecastRows::from_tasks(&tasks.val, lookback).subsample(cfg.forecast_max_rows, cfg.seed.wrapping_add(1));
    if train_rows.is_empty() || val_rows.is_empty() {
        bail!("no forecasting targets in the training or validation split");
    }
    log::info!(
        "forecasting GBDT on {} training and {} validation rows",
        train_rows.len(),
        val_rows.len()
    );
    Ok(train_gbdt_regressor(
        &train_rows.rows,
        &train_rows.targets,
        &val_rows.rows,
        &val_rows.targets,
        &cfg.gbdt_grid,
    )?)
}

pub fn save_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    serde_json::to_writer(BufWriter::new(file), value)?;
    Ok(())
}

fn load_json<T: DeserializeOwned>(path: &Path, produced_by: &str) -> Result<T> {
    let file = File::open(path)
        .with_context(|| format!("missing checkpoint {}; run `ivos {produced_by}` first", path.display()))?;
    serde_json::from_reader(BufReader::new(file)).with_context(|| format!("corrupt checkpoint {}", path.display()))
}

pub fn save_forecaster(cfg: &PipelineConfig, model: &TrainedModel) -> Result<()> {
    Ok(model.save(&cfg.np_dir())?)
}

pub fn load_forecaster(cfg: &PipelineConfig) -> Result<TrainedModel> {
    let dir = cfg.np_dir();
    if !dir.join(SIDECAR_FILE).exists() {
        bail!("missing checkpoint {}; run `ivos train` first", dir.display());
    }
    TrainedModel::load(&dir).with_context(|| format!("corrupt checkpoint {}", dir.display()))
}

pub fn save_head(cfg: &PipelineConfig, criteria: &CriteriaChoice, head: &ClassificationHead) -> Result<()> {
    Ok(head.save(&cfg.criteria_dir(criteria).join("head"))?)
}

pub fn load_head(cfg: &PipelineConfig, criteria: &CriteriaChoice) -> Result<ClassificationHead> {
    let dir = cfg.criteria_dir(criteria).join("head");
    if !dir.join(HEAD_SIDECAR_FILE).exists() {
        bail!(
            "missing checkpoint {}; run `ivos tune-head --criteria {}` first",
            dir.display(),
            criteria.label()
        );
    }
    ClassificationHead::load(&dir).with_context(|| format!("corrupt checkpoint {}", dir.display()))
}

pub fn save_classifiers(cfg: &PipelineConfig, criteria: &CriteriaChoice, c: &Classifiers) -> Result<()> {
    save_json(&cfg.criteria_dir(criteria).join("classifiers.json"), c)
}

pub fn load_classifiers(cfg: &PipelineConfig, criteria: &CriteriaChoice) -> Result<Classifiers> {
    let by = format!("train-baselines --criteria {}", criteria.label());
    load_json(&cfg.criteria_dir(criteria).join("classifiers.json"), &by)
}

pub fn save_forecast_gbdt(cfg: &PipelineConfig, m: &GbdtModel) -> Result<()> {
    save_json(&cfg.forecast_gbdt_path(), m)
}

pub fn load_forecast_gbdt(cfg: &PipelineConfig) -> Result<GbdtModel> {
    load_json(&cfg.forecast_gbdt_path(), "train-baselines")
}

/// Every model needed to score one criteria set.
#[derive(Debug, Clone)]
pub struct CriteriaModels {
    pub choice: CriteriaChoice,
    pub criteria: CriteriaSet,
    pub head: ClassificationHead,
    pub classifiers: Classifiers,
}

impl CriteriaModels {
    pub fn load(cfg: &PipelineConfig, choice: &CriteriaChoice) -> Result<Self> {
        Ok(CriteriaModels {
            criteria: choice.resolve()?,
            head: load_head(cfg, choice)?,
            classifiers: load_classifiers(cfg, choice)?,
            choice: choice.clone(),
        })
    }
}
