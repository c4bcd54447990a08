//! Fixed-length summary features of a task's lookback window: sixteen per
//! vital sign plus two missingness features.

use ivos_core::{Measurement, Task, VitalKind};

pub const PER_VARIABLE: usize = 16;
pub const FEATURE_COUNT: usize = PER_VARIABLE * VitalKind::COUNT + 2;

const PER_VARIABLE_NAMES: [&str; PER_VARIABLE] = [
    "mean",
    "std",
    "min",
    "max",
    "median",
    "count",
    "p25",
    "p75",
    "time_since_last",
    "time_span",
    "frequency",
    "slope_mean",
    "slope_std",
    "total_change",
    "n_increases",
    "n_decreases",
];

pub fn feature_names() -> Vec<String> {
    let mut out: Vec<String> = VitalKind::ALL
        .iter()
        .flat_map(|k| PER_VARIABLE_NAMES.iter().map(move |n| format!("{}_{n}", k.code())))
        .collect();
    out.push("n_absent".into());
    out.push("completeness".into());
    out
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Population standard deviation.
fn std_dev(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64).sqrt()
}

/// Linear-interpolation quantile of ascending `sorted`.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = q * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Features of one variable from its time-ordered points. Absent variables
/// get zeros except time-since-last, which is the full lookback.
fn variable_block(points: &[(f64, f64)], tau: f64, lookback: f64) -> [f64; PER_VARIABLE] {
    let mut out = [0.0; PER_VARIABLE];
    if points.is_empty() {
        out[8] = lookback;
        return out;
    }
    let values: Vec<f64> = points.iter().map(|p| p.1).collect();
    let mut sorted = values.clone();
    sorted.sort_by(f64::total_cmp);
    let n = values.len();
    let (t_first, t_last) = (points[0].0, points[n - 1].0);
    // Slopes over pairs with distinct times; coincident samples carry no rate.
    let slopes: Vec<f64> = points
        .windows(2)
        .filter(|w| w[1].0 > w[0].0)
        .map(|w| (w[1].1 - w[0].1) / (w[1].0 - w[0].0))
        .collect();
    let diffs = values.windows(2).map(|w| w[1] - w[0]);
    out[0] = mean(&values);
    out[1] = std_dev(&values);
    out[2] = sorted[0];
    out[3] = sorted[n - 1];
    out[4] = quantile(&sorted, 0.5);
    out[5] = n as f64;
    out[6] = quantile(&sorted, 0.25);
    out[7] = quantile(&sorted, 0.75);
    out[8] = tau - t_last;
    out[9] = t_last - t_first;
    out[10] = n as f64 / lookback;
    if !slopes.is_empty() {
        out[11] = mean(&slopes);
        out[12] = std_dev(&slopes);
    }
    out[13] = values[n - 1] - values[0];
    out[14] = diffs.clone().filter(|d| *d > 0.0).count() as f64;
    out[15] = diffs.filter(|d| *d < 0.0).count() as f64;
    out
}

/// Features over context points in `[tau - lookback, tau)`. Input order
/// does not matter.
pub fn extract_features(task: &Task, lookback_hours: f64) -> Vec<f64> {
    features_from(&task.context, task.tau_hours, lookback_hours)
}

pub fn features_from(context: &[Measurement], tau: f64, lookback_hours: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(FEATURE_COUNT);
    let mut absent = 0;
    for kind in VitalKind::ALL {
        let mut pts: Vec<(f64, f64)> = context
            .iter()
            .filter(|m| m.kind == kind && m.t_hours < tau && m.t_hours >= tau - lookback_hours)
            .map(|m| (m.t_hours, m.value))
            .collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        if pts.is_empty() {
            absent += 1;
        }
        out.extend_from_slice(&variable_block(&pts, tau, lookback_hours));
    }
    out.push(absent as f64);
    out.push((VitalKind::COUNT - absent) as f64 / VitalKind::COUNT as f64);
    out
}
