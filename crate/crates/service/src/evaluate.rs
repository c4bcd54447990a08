//! Test-set evaluation: forecasting error, ranking, binary decisions,
//! calibration and the alternative-criteria rerun, with paired bootstrap
//! confidence intervals and best-model flags.

use std::collections::BTreeMap;

use anyhow::{Context, Result};
use ivos_baselines::{gbdt_forecast_rows, repeat_forecast, GbdtModel};
use ivos_convcnp::{ModelError, TrainedModel};
use ivos_core::{Splits, Task, VitalKind};
use ivos_metrics::{
    auroc, average_precision, binary_metrics, brier, calibration_curve, compare_instance_metric,
    compare_precision_at_k, f1_optimal_threshold, forecast_calibration, paired_bootstrap_compare, EvalReport,
    ForecastPoint, MetricError, MetricValue, ReportMetadata, ScoredInstance, Section,
};
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::config::PipelineConfig;
use crate::pipeline::{CriteriaModels, TaskSets};
use crate::scoring::{infer, ModelKind, ModelScores, NpInference};

pub const FORECAST_SECTION: &str = "Forecasting MAE";

pub fn ranking_title(label: &str) -> String {
    format!("Ranking ({label})")
}

pub fn binary_title(label: &str) -> String {
    format!("Binary ({label})")
}

/// Column label of a vital in the forecasting table.
pub fn mae_column(kind: VitalKind) -> String {
    format!("{} ({})", kind.label(), kind.unit())
}

pub struct EvalInputs<'a> {
    pub base: &'a TrainedModel,
    pub forecast_gbdt: &'a GbdtModel,
    pub primary: &'a CriteriaModels,
    pub rerun: Option<&'a CriteriaModels>,
}

/// One forecast target with every model's point prediction.
#[derive(Debug, Clone, Copy)]
struct TargetRecord {
    kind: VitalKind,
    y: f64,
    np_mu: f64,
    np_sigma: f64,
    gbdt: f64,
    repeat: f64,
}

const FORECASTERS: [&str; 3] = ["NP", "GBDT", "Repeat"];

impl TargetRecord {
    fn prediction(&self, model: usize) -> f64 {
        match model {
            0 => self.np_mu,
            1 => self.gbdt,
            _ => self.repeat,
        }
    }
}

/// Targets scored by all three forecasters. Targets whose variable has no
/// context value (no repeat forecast) are left out for every model.
fn forecast_records(cfg: &PipelineConfig, inputs: &EvalInputs, tasks: &[Task]) -> Result<Vec<Vec<TargetRecord>>> {
    let lookback = cfg.task.lookback_hours;
    tasks
        .par_iter()
        .map(|t| {
            let dist = match inputs.base.forward(t) {
                Ok(d) => d,
                Err(ModelError::EmptyContext) => return Ok(Vec::new()),
                Err(e) => return Err(e.into()),
            };
            let queries: Vec<(f64, VitalKind)> = t.targets.iter().map(|m| (m.t_hours, m.kind)).collect();
            let repeat = repeat_forecast(t, &queries);
            let rows = gbdt_forecast_rows(t, &queries, lookback);
            let mut out = Vec::new();
            for ((m, r), row) in t.targets.iter().zip(repeat).zip(&rows) {
                let Some(repeat) = r else { continue };
                let (mu, sigma) = dist.at(m.kind, m.t_hours)?;
                out.push(TargetRecord {
                    kind: m.kind,
                    y: m.value,
                    np_mu: mu,
                    np_sigma: sigma,
                    gbdt: inputs.forecast_gbdt.predict(row),
                    repeat,
                });
            }
            Ok(out)
        })
        .collect()
}

fn forecasting_section(
    cfg: &PipelineConfig,
    records: &[Vec<TargetRecord>],
    diagnostics: &mut BTreeMap<String, Value>,
) -> Result<Section> {
    let names: Vec<String> = FORECASTERS.iter().map(|s| s.to_string()).collect();
    let mut section = Section::new(FORECAST_SECTION);
    let mut counts = BTreeMap::new();
    for kind in VitalKind::ALL {
        // Units are tasks holding at least one target of this variable.
        let units: Vec<Vec<TargetRecord>> = records
            .iter()
            .map(|r| r.iter().filter(|x| x.kind == kind).copied().collect::<Vec<_>>())
            .filter(|r| !r.is_empty())
            .collect();
        counts.insert(kind.code().to_string(), units.iter().map(Vec::len).sum::<usize>());
        if units.is_empty() {
            continue;
        }
        let cmp = paired_bootstrap_compare(
            &names,
            units.len(),
            |m, idx| {
                let (mut sum, mut n) = (0.0, 0usize);
                for &u in idx {
                    for r in &units[u] {
                        sum += (r.prediction(m) - r.y).abs();
                        n += 1;
                    }
                }
                if n == 0 {
                    return Err(MetricError::Empty);
                }
                Ok(sum / n as f64)
            },
            false,
            cfg.bootstrap_iterations,
            cfg.alpha,
            cfg.seed,
        )?;
        section.add_comparison(&mae_column(kind), &cmp);
    }
    diagnostics.insert("forecast_targets".into(), json!(counts));

    let points = |filter: Option<VitalKind>| -> Vec<ForecastPoint> {
        records
            .iter()
            .flatten()
            .filter(|r| filter.is_none_or(|k| r.kind == k))
            .map(|r| ForecastPoint {
                mu: r.np_mu,
                sigma: r.np_sigma,
                y: r.y,
            })
            .collect()
    };
    let mut cal = BTreeMap::new();
    cal.insert(
        "all".to_string(),
        json!(forecast_calibration(&points(None), cfg.calibration_bins).context("forecast calibration")?),
    );
    for kind in VitalKind::ALL {
        if let Ok(c) = forecast_calibration(&points(Some(kind)), cfg.calibration_bins) {
            cal.insert(kind.code().to_string(), json!(c));
        }
    }
    diagnostics.insert("forecast_calibration".into(), json!(cal));
    Ok(section)
}

/// Validation and test scores for one criteria set.
struct CriteriaEval {
    label: String,
    val: Vec<Task>,
    test: Vec<Task>,
    val_scores: ModelScores,
    test_scores: ModelScores,
}

fn same_tasks(a: &[Task], b: &[Task]) -> bool {
    a.len() == b.len()
        && a
            .iter()
            .zip(b)
            .all(|(x, y)| x.encounter_id == y.encounter_id && x.tau_hours == y.tau_hours)
}

/// Cached forecaster outputs keyed by the task list they were computed on.
struct InferenceCache<'a> {
    base: &'a TrainedModel,
    entries: Vec<(Vec<Task>, NpInference)>,
}

impl InferenceCache<'_> {
    fn get(&mut self, tasks: &[Task]) -> Result<NpInference> {
        if let Some((_, inf)) = self.entries.iter().find(|(t, _)| same_tasks(t, tasks)) {
            return Ok(inf.clone());
        }
        let inf = infer(self.base, tasks)?;
        self.entries.push((tasks.to_vec(), inf.clone()));
        Ok(inf)
    }
}

fn score_criteria(
    cfg: &PipelineConfig,
    splits: &Splits,
    models: &CriteriaModels,
    cache: &mut InferenceCache,
) -> Result<CriteriaEval> {
    let sets = TaskSets {
        train: Vec::new(),
        val: ivos_core::build_classification_tasks(&splits.val, &cfg.task, &models.criteria),
        test: ivos_core::build_classification_tasks(&splits.test, &cfg.task, &models.criteria),
    };
    let score = |tasks: &[Task], inf: &NpInference| {
        ModelScores::compute(
            tasks,
            inf,
            &models.criteria,
            &models.head,
            &models.classifiers,
            &cfg.task,
        )
    };
    let val_inf = cache.get(&sets.val)?;
    let test_inf = cache.get(&sets.test)?;
    Ok(CriteriaEval {
        label: models.choice.label().to_string(),
        val_scores: score(&sets.val, &val_inf)?,
        test_scores: score(&sets.test, &test_inf)?,
        val: sets.val,
        test: sets.test,
    })
}

fn names(models: &[ModelKind]) -> Vec<String> {
    models.iter().map(|m| m.title().to_string()).collect()
}

fn ranking_section(cfg: &PipelineConfig, ev: &CriteriaEval) -> Result<Section> {
    let models = ModelKind::RANKERS;
    let inst: Vec<Vec<ScoredInstance>> = models.iter().map(|&m| ev.test_scores.instances(m, &ev.test)).collect();
    let names = names(&models);
    let mut section = Section::new(ranking_title(&ev.label));
    let (iters, alpha, seed) = (cfg.bootstrap_iterations, cfg.alpha, cfg.seed);
    type Metric = fn(&[ScoredInstance]) -> Result<f64, MetricError>;
    let metrics: [(&str, Metric, bool); 3] = [("AUROC", auroc, true), ("AP", average_precision, true), ("Brier", brier, false)];
    for (name, f, higher) in metrics {
        let cmp = compare_instance_metric(&names, &inst, f, higher, iters, alpha, seed)
            .with_context(|| format!("{name} ({})", ev.label))?;
        section.add_comparison(name, &cmp);
    }
    let cmp = compare_precision_at_k(&names, &inst, cfg.top_k, cfg.min_active_per_day, iters, alpha, seed)
        .with_context(|| format!("precision@{} ({})", cfg.top_k, ev.label))?;
    section.add_comparison(&format!("P@{}", cfg.top_k), &cmp);
    Ok(section)
}

fn binary_section(cfg: &PipelineConfig, ev: &CriteriaEval) -> Result<Section> {
    let models = [
        ModelKind::Repeat,
        ModelKind::Logistic,
        ModelKind::Gbdt,
        ModelKind::Np,
        ModelKind::NpTuned,
    ];
    let mut section = Section::new(binary_title(&ev.label));
    let mut thresholds = Vec::new();
    for m in models {
        let val = ev.val_scores.instances(m, &ev.val);
        let th = f1_optimal_threshold(&val).with_context(|| format!("{} validation threshold", m.title()))?;
        section.set(m.title(), "Threshold", MetricValue::point(th));
        thresholds.push(th);
    }
    let inst: Vec<Vec<ScoredInstance>> = models.iter().map(|&m| ev.test_scores.instances(m, &ev.test)).collect();
    let names = names(&models);
    type Pick = fn(&ivos_metrics::BinaryMetrics) -> f64;
    let picks: [(&str, Pick); 4] = [
        ("F1", |b| b.f1),
        ("Accuracy", |b| b.accuracy),
        ("Precision", |b| b.precision),
        ("Recall", |b| b.recall),
    ];
    for (name, pick) in picks {
        let cmp = paired_bootstrap_compare(
            &names,
            ev.test.len(),
            |m, idx| {
                let sample: Vec<ScoredInstance> = idx.iter().map(|&i| inst[m][i].clone()).collect();
                binary_metrics(&sample, thresholds[m]).map(|b| pick(&b))
            },
            true,
            cfg.bootstrap_iterations,
            cfg.alpha,
            cfg.seed,
        )
        .with_context(|| format!("{name} ({})", ev.label))?;
        section.add_comparison(name, &cmp);
    }
    Ok(section)
}

fn calibration_diagnostics(cfg: &PipelineConfig, ev: &CriteriaEval) -> Result<Value> {
    let mut out = BTreeMap::new();
    for m in ModelKind::RANKERS {
        let bins = calibration_curve(&ev.test_scores.instances(m, &ev.test), cfg.calibration_bins)?;
        out.insert(m.title().to_string(), json!(bins));
    }
    Ok(json!(out))
}

fn prevalence(tasks: &[Task]) -> f64 {
    tasks.iter().filter(|t| t.label == Some(true)).count() as f64 / tasks.len().max(1) as f64
}

fn model_summary(models: &CriteriaModels) -> Value {
    json!({
        "head": {
            "learning_rate": models.head.config.learning_rate,
            "dropout": models.head.config.dropout,
            "best_epoch": models.head.log.best_epoch,
            "best_val_ap": models.head.log.best_val_ap,
        },
        "logistic_c": models.classifiers.logistic.c,
        "gbdt": models.classifiers.gbdt.params,
    })
}

/// Builds the full report. Output depends only on the inputs and the seed.
pub fn evaluate(cfg: &PipelineConfig, splits: &Splits, inputs: &EvalInputs) -> Result<EvalReport> {
    let mut diagnostics = BTreeMap::new();
    let mut sections = Vec::new();

    let forecast_tasks = ivos_core::build_forecast_tasks(&splits.test, &cfg.task, cfg.seed);
    let records = forecast_records(cfg, inputs, &forecast_tasks)?;
    sections.push(forecasting_section(cfg, &records, &mut diagnostics)?);

    let mut cache = InferenceCache {
        base: inputs.base,
        entries: Vec::new(),
    };
    let mut runs = vec![score_criteria(cfg, splits, inputs.primary, &mut cache)?];
    if let Some(r) = inputs.rerun {
        runs.push(score_criteria(cfg, splits, r, &mut cache)?);
    }

    let mut extra = BTreeMap::new();
    let mut summaries = BTreeMap::new();
    for (ev, models) in runs.iter().zip([Some(inputs.primary), inputs.rerun].into_iter().flatten()) {
        sections.push(ranking_section(cfg, ev)?);
        sections.push(binary_section(cfg, ev)?);
        diagnostics.insert(format!("calibration.{}", ev.label), calibration_diagnostics(cfg, ev)?);
        summaries.insert(
            ev.label.clone(),
            json!({
                "val_tasks": ev.val.len(),
                "test_tasks": ev.test.len(),
                "test_prevalence": prevalence(&ev.test),
                "models": model_summary(models),
            }),
        );
    }
    extra.insert("criteria".into(), json!(summaries));
    extra.insert("primary_criteria".into(), json!(runs[0].label));
    extra.insert("model_preset".into(), json!(cfg.model_preset));
    extra.insert("test_cutoff".into(), json!(cfg.split.test_cutoff));
    extra.insert("test_forecast_tasks".into(), json!(forecast_tasks.len()));
    extra.insert(
        "np_training".into(),
        json!({
            "channels": inputs.base.config.channels,
            "learning_rate": inputs.base.config.learning_rate,
            "best_epoch": inputs.base.log.best_epoch,
            "best_val_nll": inputs.base.log.best_val_nll,
            "epochs_run": inputs.base.log.epochs.len(),
        }),
    );
    extra.insert("forecast_gbdt".into(), json!(inputs.forecast_gbdt.params));

    let k = ModelKind::RANKERS.len();
    Ok(EvalReport {
        metadata: ReportMetadata {
            seed: cfg.seed,
            bootstrap_iterations: cfg.bootstrap_iterations,
            alpha: cfg.alpha,
            n_models: k,
            alpha_adjusted: cfg.alpha / (k - 1) as f64,
            extra,
        },
        sections,
        diagnostics,
    })
}

/// Writes `report.json` and `report.txt` under the report directory.
pub fn write_report(cfg: &PipelineConfig, report: &EvalReport) -> Result<()> {
    std::fs::create_dir_all(&cfg.paths.report_dir)?;
    std::fs::write(cfg.report_json(), report.to_json())?;
    std::fs::write(cfg.report_table(), report.to_table())?;
    Ok(())
}
