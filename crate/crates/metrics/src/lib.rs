//! Evaluation battery: ranking metrics (AUROC, average precision, Brier,
//! precision@k), thresholded binary metrics, probability and forecast
//! calibration, forecast MAE, and paired bootstrap comparison.

pub mod binary;
pub mod bootstrap;
pub mod calibration;
pub mod ranking;
pub mod report;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use binary::{binary_metrics, f1_optimal_threshold, BinaryMetrics};
pub use bootstrap::{
    bootstrap_indices, compare_instance_metric, compare_precision_at_k, index_digest, mae_by_variable, metric_ci,
    paired_bootstrap, paired_bootstrap_compare, percentile, Comparison, MaeSummary, PairedBootstrap, TargetError,
};
pub use calibration::{
    calibration_curve, forecast_calibration, CalibrationBin, ForecastCalibration, ForecastPoint, SigmaBin,
    COVERAGE_LEVELS,
};
pub use ranking::{auroc, average_precision, average_precision_of, brier, daily_precision_at_k, precision_at_k, rank_day};
pub use report::{EvalReport, MetricValue, ReportMetadata, Section};

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("metric needs both classes, got only {0}")]
    SingleClass(&'static str),
    #[error("no instances")]
    Empty,
    #[error("no day has at least {0} active instances")]
    NoValidDay(usize),
    #[error("score {0} is not a probability")]
    InvalidScore(f64),
    #[error("instance sets differ: {0}")]
    Mismatch(String),
    #[error("need at least {0} items")]
    TooFew(usize),
}

/// One scored classification instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredInstance {
    pub encounter_id: String,
    pub day: NaiveDate,
    pub p: f64,
    pub y: bool,
}

impl ScoredInstance {
    pub fn new(encounter_id: impl Into<String>, day: NaiveDate, p: f64, y: bool) -> Self {
        ScoredInstance {
            encounter_id: encounter_id.into(),
            day,
            p,
            y,
        }
    }
}

pub(crate) fn check_scores(xs: &[ScoredInstance]) -> Result<(), MetricError> {
    if xs.is_empty() {
        return Err(MetricError::Empty);
    }
    match xs.iter().find(|x| !(0.0..=1.0).contains(&x.p)) {
        Some(x) => Err(MetricError::InvalidScore(x.p)),
        None => Ok(()),
    }
}
