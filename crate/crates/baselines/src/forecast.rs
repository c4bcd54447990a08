//! Row construction for the single forecasting GBDT: shared window
//! features, the queried variable as one-hot, and the horizon.

use ivos_core::{Task, VitalKind};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::features::{extract_features, FEATURE_COUNT};

pub const FORECAST_ROW_LEN: usize = FEATURE_COUNT + VitalKind::COUNT + 1;

/// One row per query `(t, kind)`: features ++ one-hot(kind) ++ (t - tau).
pub fn gbdt_forecast_rows(task: &Task, queries: &[(f64, VitalKind)], lookback_hours: f64) -> Vec<Vec<f64>> {
    let shared = extract_features(task, lookback_hours);
    queries
        .iter()
        .map(|&(t, kind)| {
            let mut row = Vec::with_capacity(FORECAST_ROW_LEN);
            row.extend_from_slice(&shared);
            row.extend_from_slice(&kind.one_hot());
            row.push(t - task.tau_hours);
            row
        })
        .collect()
}

/// Rows and observed values for every target of every task.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ForecastRows {
    pub rows: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
}

impl ForecastRows {
    pub fn from_tasks(tasks: &[Task], lookback_hours: f64) -> ForecastRows {
        let mut out = ForecastRows::default();
        for t in tasks {
            let queries: Vec<(f64, VitalKind)> = t.targets.iter().map(|m| (m.t_hours, m.kind)).collect();
            out.rows.extend(gbdt_forecast_rows(t, &queries, lookback_hours));
            out.targets.extend(t.targets.iter().map(|m| m.value));
        }
        out
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// At most `max_rows` rows drawn without replacement, in original order.
    pub fn subsample(&self, max_rows: usize, seed: u64) -> ForecastRows {
        if self.len() <= max_rows {
            return self.clone();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx = sample(&mut rng, self.len(), max_rows).into_vec();
        idx.sort_unstable();
        ForecastRows {
            rows: idx.iter().map(|&i| self.rows[i].clone()).collect(),
            targets: idx.iter().map(|&i| self.targets[i]).collect(),
        }
    }
}
