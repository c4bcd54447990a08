use std::collections::BTreeMap;

use chrono::NaiveDate;

use crate::{check_scores, MetricError, ScoredInstance};

/// Indices sorted by descending score.
fn order_desc(xs: &[ScoredInstance]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[b].p.total_cmp(&xs[a].p));
    idx
}

/// Area under the ROC curve by the trapezoidal rule over tied score groups.
/// The area is accumulated in integers, so it equals the pairwise statistic
/// (ties counted one half) exactly.
pub fn auroc(xs: &[ScoredInstance]) -> Result<f64, MetricError> {
    check_scores(xs)?;
    let pos = xs.iter().filter(|x| x.y).count() as u128;
    let neg = xs.len() as u128 - pos;
    if pos == 0 || neg == 0 {
        return Err(MetricError::SingleClass("auroc"));
    }
    let idx = order_desc(xs);
    let (mut tp, mut fp) = (0u128, 0u128);
    let mut twice_area = 0u128;
    let mut i = 0;
    while i < idx.len() {
        let (tp0, fp0) = (tp, fp);
        let s = xs[idx[i]].p;
        while i < idx.len() && xs[idx[i]].p == s {
            if xs[idx[i]].y {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        twice_area += (fp - fp0) * (tp + tp0);
    }
    Ok(twice_area as f64 / (2 * pos * neg) as f64)
}

/// Step-wise average precision: `sum_k (R_k - R_{k-1}) P_k` over
/// descending unique thresholds.
pub fn average_precision(xs: &[ScoredInstance]) -> Result<f64, MetricError> {
    check_scores(xs)?;
    let pos = xs.iter().filter(|x| x.y).count();
    if pos == 0 {
        return Err(MetricError::SingleClass("average precision"));
    }
    let idx = order_desc(xs);
    let (mut tp, mut seen) = (0usize, 0usize);
    let mut ap = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let tp0 = tp;
        let s = xs[idx[i]].p;
        while i < idx.len() && xs[idx[i]].p == s {
            tp += usize::from(xs[idx[i]].y);
            seen += 1;
            i += 1;
        }
        if tp > tp0 {
            ap += (tp - tp0) as f64 / pos as f64 * (tp as f64 / seen as f64);
        }
    }
    Ok(ap)
}

/// Average precision of bare score/label pairs.
pub fn average_precision_of(scores: &[f64], labels: &[bool]) -> Result<f64, MetricError> {
    let xs: Vec<ScoredInstance> = scores
        .iter()
        .zip(labels)
        .map(|(&p, &y)| ScoredInstance::new(String::new(), NaiveDate::default(), p, y))
        .collect();
    average_precision(&xs)
}

pub fn brier(xs: &[ScoredInstance]) -> Result<f64, MetricError> {
    check_scores(xs)?;
    let s: f64 = xs
        .iter()
        .map(|x| {
            let d = x.p - if x.y { 1.0 } else { 0.0 };
            d * d
        })
        .sum();
    Ok(s / xs.len() as f64)
}

/// The ranking order used everywhere a day's list is shown or scored:
/// descending score, ties by ascending encounter id.
pub fn rank_day<T>(items: &mut [T], score: impl Fn(&T) -> f64, id: impl Fn(&T) -> &str) {
    items.sort_by(|a, b| score(b).total_cmp(&score(a)).then_with(|| id(a).cmp(id(b))));
}

/// Precision of the top `k` on every day with at least `min_active`
/// instances, keyed by day.
pub fn daily_precision_at_k(
    xs: &[ScoredInstance],
    k: usize,
    min_active: usize,
) -> Result<BTreeMap<NaiveDate, f64>, MetricError> {
    check_scores(xs)?;
    let mut days: BTreeMap<NaiveDate, Vec<&ScoredInstance>> = BTreeMap::new();
    for x in xs {
        days.entry(x.day).or_default().push(x);
    }
    let mut out = BTreeMap::new();
    for (day, mut items) in days {
        if items.len() < min_active {
            continue;
        }
        rank_day(&mut items, |x| x.p, |x| &x.encounter_id);
        let top = k.min(items.len());
        let hits = items[..top].iter().filter(|x| x.y).count();
        out.insert(day, hits as f64 / top as f64);
    }
    if out.is_empty() {
        return Err(MetricError::NoValidDay(min_active));
    }
    Ok(out)
}

/// Mean over valid days of the top-`k` precision.
pub fn precision_at_k(xs: &[ScoredInstance], k: usize, min_active: usize) -> Result<f64, MetricError> {
    let days = daily_precision_at_k(xs, k, min_active)?;
    Ok(days.values().sum::<f64>() / days.len() as f64)
}
