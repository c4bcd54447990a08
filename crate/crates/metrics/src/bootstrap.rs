//! Percentile bootstrap with one shared index sample per iteration.

use ivos_core::hashing::{fnv1a, indexed_hash};
use ivos_core::{PerVital, VitalKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ranking::daily_precision_at_k;
use crate::{MetricError, ScoredInstance};

/// Resampling-with-replacement indices for one iteration. Depends only on
/// `(seed, iteration, n)`.
pub fn bootstrap_indices(n: usize, seed: u64, iteration: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(indexed_hash(seed, iteration));
    (0..n).map(|_| rng.random_range(0..n)).collect()
}

/// FNV digest of an index sample, for auditing that models shared it.
pub fn index_digest(indices: &[usize]) -> u64 {
    let bytes: Vec<u8> = indices.iter().flat_map(|&i| (i as u64).to_le_bytes()).collect();
    fnv1a(&bytes)
}

/// Linear-interpolation percentile of ascending `sorted`, `q` in [0, 1].
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = q * (n - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// 2.5/97.5 percentile interval, widened if needed to contain `point`.
fn interval(samples: &[f64], point: f64) -> (f64, f64) {
    if samples.is_empty() {
        return (point, point);
    }
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    (percentile(&s, 0.025).min(point), percentile(&s, 0.975).max(point))
}

/// Bootstrap draws for several models over shared units.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedBootstrap {
    /// Metric on the full sample, per model.
    pub point: Vec<f64>,
    /// `samples[m][i]` is model `m` on the `i`-th retained iteration.
    pub samples: Vec<Vec<f64>>,
    /// Digest of every iteration's indices, retained or not.
    pub digests: Vec<u64>,
    pub skipped: usize,
}

/// Runs `iterations` draws of `n_units` shared indices and evaluates
/// `metric(model, indices)` for every model. An iteration on which any model's
/// metric fails is dropped for all models.
pub fn paired_bootstrap<F>(
    n_models: usize,
    n_units: usize,
    iterations: usize,
    seed: u64,
    metric: F,
) -> Result<PairedBootstrap, MetricError>
where
    F: Fn(usize, &[usize]) -> Result<f64, MetricError> + Sync,
{
    if n_units == 0 {
        return Err(MetricError::Empty);
    }
    let all: Vec<usize> = (0..n_units).collect();
    let point = (0..n_models).map(|m| metric(m, &all)).collect::<Result<Vec<_>, _>>()?;
    let draws: Vec<(u64, Option<Vec<f64>>)> = (0..iterations as u64)
        .into_par_iter()
        .map(|it| {
            let idx = bootstrap_indices(n_units, seed, it);
            let values = (0..n_models).map(|m| metric(m, &idx)).collect::<Result<Vec<_>, _>>().ok();
            (index_digest(&idx), values)
        })
        .collect();
    let mut samples = vec![Vec::with_capacity(iterations); n_models];
    let mut digests = Vec::with_capacity(iterations);
    let mut skipped = 0;
    for (digest, values) in draws {
        digests.push(digest);
        match values {
            Some(v) => v.into_iter().zip(samples.iter_mut()).for_each(|(x, s)| s.push(x)),
            None => skipped += 1,
        }
    }
    Ok(PairedBootstrap {
        point,
        samples,
        digests,
        skipped,
    })
}

/// Outcome of comparing models on one metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub models: Vec<String>,
    pub higher_is_better: bool,
    pub point: Vec<f64>,
    pub ci: Vec<(f64, f64)>,
    /// Index of the model with the best point estimate; first wins ties.
    pub best: usize,
    /// Fraction of iterations on which the best model strictly beat each
    /// model (0 for the best itself).
    pub win_fraction: Vec<f64>,
    pub alpha: f64,
    pub alpha_adjusted: f64,
    /// Models not significantly worse than the best, including the best.
    pub equal_best: Vec<bool>,
    pub iterations: usize,
    pub skipped: usize,
    /// FNV over all per-iteration index digests.
    pub index_digest: u64,
}

impl Comparison {
    pub fn best_set(&self) -> Vec<&str> {
        self.models
            .iter()
            .zip(&self.equal_best)
            .filter(|(_, &f)| f)
            .map(|(m, _)| m.as_str())
            .collect()
    }
}

/// Bonferroni-adjusted comparison against the best point estimate. A model is
/// flagged equal-best when the best beats it on at most a `1 - alpha_adj / 2`
/// fraction of iterations, with `alpha_adj = alpha / (k - 1)`.
pub fn paired_bootstrap_compare<F>(
    models: &[String],
    n_units: usize,
    metric: F,
    higher_is_better: bool,
    iterations: usize,
    alpha: f64,
    seed: u64,
) -> Result<Comparison, MetricError>
where
    F: Fn(usize, &[usize]) -> Result<f64, MetricError> + Sync,
{
    let k = models.len();
    if k < 2 {
        return Err(MetricError::TooFew(2));
    }
    let boot = paired_bootstrap(k, n_units, iterations, seed, metric)?;
    let better = |a: f64, b: f64| if higher_is_better { a > b } else { a < b };
    let mut best = 0;
    for m in 1..k {
        if better(boot.point[m], boot.point[best]) {
            best = m;
        }
    }
    let used = boot.samples[best].len();
    let alpha_adjusted = alpha / (k - 1) as f64;
    let win_fraction: Vec<f64> = (0..k)
        .map(|m| {
            if used == 0 {
                return 0.0;
            }
            let wins = (0..used)
                .filter(|&i| better(boot.samples[best][i], boot.samples[m][i]))
                .count();
            wins as f64 / used as f64
        })
        .collect();
    let equal_best = win_fraction
        .iter()
        .enumerate()
        .map(|(m, &f)| m == best || f <= 1.0 - alpha_adjusted / 2.0)
        .collect();
    let digest_bytes: Vec<u8> = boot.digests.iter().flat_map(|d| d.to_le_bytes()).collect();
    Ok(Comparison {
        models: models.to_vec(),
        higher_is_better,
        ci: (0..k).map(|m| interval(&boot.samples[m], boot.point[m])).collect(),
        point: boot.point,
        best,
        win_fraction,
        alpha,
        alpha_adjusted,
        equal_best,
        iterations,
        skipped: boot.skipped,
        index_digest: fnv1a(&digest_bytes),
    })
}

fn check_aligned(models: &[Vec<ScoredInstance>]) -> Result<(), MetricError> {
    let Some(first) = models.first() else {
        return Err(MetricError::TooFew(2));
    };
    for (m, other) in models.iter().enumerate().skip(1) {
        if other.len() != first.len() {
            return Err(MetricError::Mismatch(format!(
                "model {m} has {} instances, model 0 has {}",
                other.len(),
                first.len()
            )));
        }
        for (a, b) in first.iter().zip(other) {
            if a.encounter_id != b.encounter_id || a.day != b.day || a.y != b.y {
                return Err(MetricError::Mismatch(format!(
                    "model {m} differs at ({}, {})",
                    b.encounter_id, b.day
                )));
            }
        }
    }
    Ok(())
}

/// Paired comparison of an instance-level metric, resampling instances.
/// Instance lists must share keys and labels in the same order.
pub fn compare_instance_metric(
    names: &[String],
    models: &[Vec<ScoredInstance>],
    metric: fn(&[ScoredInstance]) -> Result<f64, MetricError>,
    higher_is_better: bool,
    iterations: usize,
    alpha: f64,
    seed: u64,
) -> Result<Comparison, MetricError> {
    check_aligned(models)?;
    let n = models[0].len();
    paired_bootstrap_compare(
        names,
        n,
        |m, idx| {
            let sample: Vec<ScoredInstance> = idx.iter().map(|&i| models[m][i].clone()).collect();
            metric(&sample)
        },
        higher_is_better,
        iterations,
        alpha,
        seed,
    )
}

/// Paired comparison of precision@k, resampling valid days.
pub fn compare_precision_at_k(
    names: &[String],
    models: &[Vec<ScoredInstance>],
    k: usize,
    min_active: usize,
    iterations: usize,
    alpha: f64,
    seed: u64,
) -> Result<Comparison, MetricError> {
    check_aligned(models)?;
    let daily: Vec<Vec<f64>> = models
        .iter()
        .map(|xs| daily_precision_at_k(xs, k, min_active).map(|d| d.into_values().collect()))
        .collect::<Result<_, _>>()?;
    let n_days = daily[0].len();
    paired_bootstrap_compare(
        names,
        n_days,
        |m, idx| Ok(idx.iter().map(|&d| daily[m][d]).sum::<f64>() / idx.len() as f64),
        true,
        iterations,
        alpha,
        seed,
    )
}

/// One forecast target: prediction and observation of a variable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetError {
    pub kind: VitalKind,
    pub prediction: f64,
    pub target: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaeSummary {
    pub mae: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_targets: usize,
}

/// Per-task sums of absolute errors and counts for each variable.
fn task_sums(tasks: &[Vec<TargetError>]) -> Vec<PerVital<(f64, usize)>> {
    tasks
        .iter()
        .map(|t| {
            let mut acc = PerVital::<(f64, usize)>::default();
            for e in t {
                let slot = &mut acc[e.kind];
                slot.0 += (e.prediction - e.target).abs();
                slot.1 += 1;
            }
            acc
        })
        .collect()
}

/// MAE per variable over all target points, with a percentile CI from
/// resampling whole tasks. Variables without targets are `None`.
pub fn mae_by_variable(
    tasks: &[Vec<TargetError>],
    iterations: usize,
    seed: u64,
) -> PerVital<Option<MaeSummary>> {
    let sums = task_sums(tasks);
    let n = sums.len();
    let total = |idx: &mut dyn Iterator<Item = usize>| {
        let mut acc = PerVital::<(f64, usize)>::default();
        for i in idx {
            for k in VitalKind::ALL {
                acc[k].0 += sums[i][k].0;
                acc[k].1 += sums[i][k].1;
            }
        }
        acc
    };
    let point = total(&mut (0..n));
    let draws: Vec<PerVital<(f64, usize)>> = if n == 0 {
        Vec::new()
    } else {
        (0..iterations as u64)
            .into_par_iter()
            .map(|it| total(&mut bootstrap_indices(n, seed, it).into_iter()))
            .collect()
    };
    PerVital::from_fn(|k| {
        let (s, c) = point[k];
        if c == 0 {
            return None;
        }
        let mae = s / c as f64;
        let samples: Vec<f64> = draws
            .iter()
            .filter(|d| d[k].1 > 0)
            .map(|d| d[k].0 / d[k].1 as f64)
            .collect();
        let (ci_low, ci_high) = interval(&samples, mae);
        Some(MaeSummary {
            mae,
            ci_low,
            ci_high,
            n_targets: c,
        })
    })
}

/// Bootstrap CI for a single model's instance-level metric.
pub fn metric_ci(
    xs: &[ScoredInstance],
    metric: fn(&[ScoredInstance]) -> Result<f64, MetricError>,
    iterations: usize,
    seed: u64,
) -> Result<(f64, f64, f64), MetricError> {
    let boot = paired_bootstrap(1, xs.len(), iterations, seed, |_, idx| {
        let sample: Vec<ScoredInstance> = idx.iter().map(|&i| xs[i].clone()).collect();
        metric(&sample)
    })?;
    let (lo, hi) = interval(&boot.samples[0], boot.point[0]);
    Ok((boot.point[0], lo, hi))
}
