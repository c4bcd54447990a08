//! Prediction tasks: daily IV-gated classification tasks, uniformly sampled
//! forecasting tasks, and switch-readiness labels from interval medians.

use chrono::{Days, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::criteria::CriteriaSet;
use crate::data::{CohortDataset, Encounter, Measurement, Route};
use crate::error::DataError;
use crate::hashing::keyed_hash;
use crate::vital::{PerVital, VitalKind};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TaskConfig {
    pub lookback_hours: f64,
    /// Forecast window length.
    pub forecast_hours: f64,
    pub agg_interval_hours: f64,
    pub min_context_measurements: usize,
    /// Clock hour of the daily prediction; admission is taken to be 00:00.
    pub daily_prediction_hour: f64,
    pub iv_grace_hours: f64,
    pub tasks_per_day: f64,
}

impl Default for TaskConfig {
    fn default() -> Self {
        TaskConfig {
            lookback_hours: 48.0,
            forecast_hours: 12.0,
            agg_interval_hours: 3.0,
            min_context_measurements: 10,
            daily_prediction_hour: 9.0,
            iv_grace_hours: 36.0,
            tasks_per_day: 1.0,
        }
    }
}

impl TaskConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        let positive = [
            self.lookback_hours,
            self.forecast_hours,
            self.agg_interval_hours,
            self.iv_grace_hours,
            self.tasks_per_day,
        ];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(DataError::Config("task window settings must be positive".into()));
        }
        if !(0.0..24.0).contains(&self.daily_prediction_hour) {
            return Err(DataError::Config("daily_prediction_hour must lie in [0, 24)".into()));
        }
        let ratio = self.forecast_hours / self.agg_interval_hours;
        if (ratio - ratio.round()).abs() > 1e-9 {
            return Err(DataError::Config(
                "forecast_hours must be a multiple of agg_interval_hours".into(),
            ));
        }
        Ok(())
    }

    pub fn n_intervals(&self) -> usize {
        (self.forecast_hours / self.agg_interval_hours).round() as usize
    }

    /// Centres of the aggregation intervals, relative to the prediction time.
    pub fn interval_centres(&self) -> Vec<f64> {
        (0..self.n_intervals())
            .map(|k| (k as f64 + 0.5) * self.agg_interval_hours)
            .collect()
    }
}

/// A prediction instance anchored at `tau_hours` after admission.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub encounter_id: String,
    #[serde(rename = "tau")]
    pub tau_hours: f64,
    pub context: Vec<Measurement>,
    pub targets: Vec<Measurement>,
    pub label: Option<bool>,
    pub day_key: NaiveDate,
}

impl Task {
    /// Most recent context value of each vital, if any.
    pub fn last_values(&self) -> PerVital<Option<f64>> {
        let mut out = PerVital::from_fn(|_| None);
        for m in &self.context {
            out[m.kind] = Some(m.value);
        }
        out
    }

    pub fn context_of(&self, kind: VitalKind) -> impl Iterator<Item = &Measurement> {
        self.context.iter().filter(move |m| m.kind == kind)
    }
}

/// IV-active rule: an IV order covers `t`, or one ended within the preceding
/// `grace_hours`.
pub fn iv_active(e: &Encounter, t: f64, grace_hours: f64) -> bool {
    e.orders.iter().filter(|o| o.route == Route::Iv).any(|o| {
        (o.start_hours <= t && t <= o.end_hours) || (o.end_hours >= t - grace_hours && o.end_hours < t)
    })
}

fn slice_between(ms: &[Measurement], from: f64, to: f64, to_inclusive: bool) -> Vec<Measurement> {
    let lo = ms.partition_point(|m| m.t_hours < from);
    let hi = if to_inclusive {
        ms.partition_point(|m| m.t_hours <= to)
    } else {
        ms.partition_point(|m| m.t_hours < to)
    };
    ms[lo..hi.max(lo)].to_vec()
}

/// Context in `[tau - lookback, tau)` and targets in `[tau, tau + forecast]`.
pub fn make_task(e: &Encounter, tau: f64, cfg: &TaskConfig) -> Task {
    let day = (tau / 24.0).floor().max(0.0) as u64;
    Task {
        encounter_id: e.encounter_id.clone(),
        tau_hours: tau,
        context: slice_between(&e.measurements, tau - cfg.lookback_hours, tau, false),
        targets: slice_between(&e.measurements, tau, tau + cfg.forecast_hours, true),
        label: None,
        day_key: e.admit_date + Days::new(day),
    }
}

fn classification_tasks_for(e: &Encounter, cfg: &TaskConfig, criteria: &CriteriaSet) -> Vec<Task> {
    let mut out = Vec::new();
    let mut day = 0u32;
    loop {
        let tau = 24.0 * f64::from(day) + cfg.daily_prediction_hour;
        day += 1;
        if tau > e.length_hours {
            break;
        }
        if tau < cfg.lookback_hours || !iv_active(e, tau, cfg.iv_grace_hours) {
            continue;
        }
        let mut task = make_task(e, tau, cfg);
        if task.context.len() < cfg.min_context_measurements || task.targets.is_empty() {
            continue;
        }
        task.label = Some(label_task(&task, criteria, cfg));
        out.push(task);
    }
    out
}

/// One candidate task per encounter-day at the daily prediction hour, kept
/// when IV-active with enough context and at least one target. Sorted by
/// `(day_key, encounter_id)`.
pub fn build_classification_tasks(
    d: &CohortDataset,
    cfg: &TaskConfig,
    criteria: &CriteriaSet,
) -> Vec<Task> {
    let mut tasks: Vec<Task> = d
        .encounters
        .par_iter()
        .map(|e| classification_tasks_for(e, cfg, criteria))
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect();
    tasks.sort_by(|a, b| {
        (a.day_key, &a.encounter_id)
            .cmp(&(b.day_key, &b.encounter_id))
            .then(a.tau_hours.total_cmp(&b.tau_hours))
    });
    let positives = tasks.iter().filter(|t| t.label == Some(true)).count();
    log::info!(
        "built {} classification tasks from {} encounters ({} switch-ready)",
        tasks.len(),
        d.len(),
        positives
    );
    tasks
}

/// `floor(length / 24 * tasks_per_day)` tasks per encounter with prediction
/// times uniform on `[lookback, length - forecast]`.
pub fn build_forecast_tasks(d: &CohortDataset, cfg: &TaskConfig, seed: u64) -> Vec<Task> {
    let tasks: Vec<Task> = d
        .encounters
        .par_iter()
        .map(|e| {
            let hi = e.length_hours - cfg.forecast_hours;
            if hi < cfg.lookback_hours {
                return Vec::new();
            }
            let n = (e.length_hours / 24.0 * cfg.tasks_per_day).floor() as usize;
            let mut rng = ChaCha8Rng::seed_from_u64(keyed_hash(seed, &e.encounter_id));
            let mut taus: Vec<f64> = (0..n)
                .map(|_| cfg.lookback_hours + rng.random::<f64>() * (hi - cfg.lookback_hours))
                .collect();
            taus.sort_by(f64::total_cmp);
            taus.into_iter().map(|tau| make_task(e, tau, cfg)).collect()
        })
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect();
    log::info!("built {} forecasting tasks from {} encounters", tasks.len(), d.len());
    tasks
}

/// Median with the mean-of-middle-pair convention for even counts.
pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}

/// Per-interval medians over the forecast window; `None` marks an empty cell.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregatedWindow {
    pub cells: Vec<PerVital<Option<f64>>>,
}

/// Interval `k` covers `[tau + k*a, tau + (k+1)*a)`; a measurement exactly at
/// the window end falls in the last interval.
pub fn aggregate_window(ms: &[Measurement], tau: f64, cfg: &TaskConfig) -> AggregatedWindow {
    let n = cfg.n_intervals();
    let mut buckets: Vec<PerVital<Vec<f64>>> = (0..n).map(|_| PerVital::default()).collect();
    for m in ms {
        let offset = m.t_hours - tau;
        if offset < 0.0 || offset > cfg.forecast_hours {
            continue;
        }
        let k = ((offset / cfg.agg_interval_hours).floor() as usize).min(n - 1);
        buckets[k][m.kind].push(m.value);
    }
    AggregatedWindow {
        cells: buckets
            .iter_mut()
            .map(|b| PerVital::from_fn(|kind| median(&mut b[kind])))
            .collect(),
    }
}

/// Switch-ready iff every present interval median of every enabled variable
/// satisfies its criterion.
pub fn label_task(task: &Task, criteria: &CriteriaSet, cfg: &TaskConfig) -> bool {
    let agg = aggregate_window(&task.targets, task.tau_hours, cfg);
    agg.cells.iter().all(|cell| {
        VitalKind::ALL
            .into_iter()
            .all(|k| cell[k].map_or(true, |v| criteria.satisfied(k, v)))
    })
}

/// Writes tasks as JSON lines.
pub fn write_tasks<W: std::io::Write>(tasks: &[Task], mut out: W) -> Result<(), DataError> {
    for t in tasks {
        serde_json::to_writer(&mut out, t).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
