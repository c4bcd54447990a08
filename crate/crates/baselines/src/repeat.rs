//! Last-observation-carried-forward forecaster and its criteria classifier.

use ivos_core::{CriteriaSet, Task, VitalKind};

/// Each query gets the last context value of its own variable, or `None`
/// when that variable has no context.
pub fn repeat_forecast(task: &Task, queries: &[(f64, VitalKind)]) -> Vec<Option<f64>> {
    let last = task.last_values();
    queries.iter().map(|&(_, k)| last[k]).collect()
}

/// 1 when every enabled variable's last value meets its criterion (absent
/// variables pass), else 0.
pub fn repeat_classify(task: &Task, criteria: &CriteriaSet) -> f64 {
    let last = task.last_values();
    let ok = criteria
        .enabled_kinds()
        .all(|k| last[k].is_none_or(|x| criteria.satisfied(k, x)));
    if ok {
        1.0
    } else {
        0.0
    }
}
