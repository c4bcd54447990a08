use serde::{Deserialize, Serialize};

use crate::{check_scores, MetricError, ScoredInstance};

/// Thresholded classification metrics; an instance is predicted positive
/// when `p >= threshold`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinaryMetrics {
    pub threshold: f64,
    pub f1: f64,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Clone, Copy)]
struct Counts {
    tp: usize,
    fp: usize,
    fn_: usize,
    tn: usize,
}

impl Counts {
    fn f1(self) -> f64 {
        if self.tp == 0 {
            return 0.0;
        }
        2.0 * self.tp as f64 / (2 * self.tp + self.fp + self.fn_) as f64
    }
}

fn counts_at(xs: &[ScoredInstance], threshold: f64) -> Counts {
    let mut c = Counts { tp: 0, fp: 0, fn_: 0, tn: 0 };
    for x in xs {
        match (x.p >= threshold, x.y) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    c
}

/// Threshold maximising F1 over the unique scores plus 0 and 1.
/// Ties go to the lowest threshold.
pub fn f1_optimal_threshold(val: &[ScoredInstance]) -> Result<f64, MetricError> {
    check_scores(val)?;
    let pos = val.iter().filter(|x| x.y).count();
    if pos == 0 || pos == val.len() {
        return Err(MetricError::SingleClass("f1 threshold"));
    }
    let mut candidates: Vec<f64> = val.iter().map(|x| x.p).chain([0.0, 1.0]).collect();
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();

    // Scores sorted descending; sweeping candidates from the top means each
    // candidate admits a contiguous run of new positives.
    let mut sorted: Vec<(f64, bool)> = val.iter().map(|x| (x.p, x.y)).collect();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    let (mut tp, mut fp, mut i) = (0usize, 0usize, 0usize);
    let mut best = (f64::NEG_INFINITY, 1.0);
    for &theta in candidates.iter().rev() {
        while i < sorted.len() && sorted[i].0 >= theta {
            if sorted[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let f1 = Counts { tp, fp, fn_: pos - tp, tn: 0 }.f1();
        // Descending sweep, so `>=` keeps the lowest threshold among ties.
        if f1 >= best.0 {
            best = (f1, theta);
        }
    }
    Ok(best.1)
}

pub fn binary_metrics(xs: &[ScoredInstance], threshold: f64) -> Result<BinaryMetrics, MetricError> {
    check_scores(xs)?;
    let c = counts_at(xs, threshold);
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    Ok(BinaryMetrics {
        threshold,
        f1: c.f1(),
        accuracy: ratio(c.tp + c.tn, xs.len()),
        precision: ratio(c.tp, c.tp + c.fp),
        recall: ratio(c.tp, c.tp + c.fn_),
    })
}
