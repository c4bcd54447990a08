use ivos_core::gaussian_quantile;
use serde::{Deserialize, Serialize};

use crate::{check_scores, MetricError, ScoredInstance};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBin {
    pub lower: f64,
    pub upper: f64,
    pub mean_score: f64,
    pub frequency: f64,
    pub count: usize,
}

/// Inclusive nearest-rank quantile of ascending `sorted`.
fn nearest_rank(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let rank = (q * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

/// Assigns each sorted value to a quantile bin. Bin 0 is `[e0, e1]`, later
/// bins are `(e_j, e_j+1]`; equal edges leave a bin empty.
fn quantile_bins(sorted: &[f64], n_bins: usize) -> Vec<(f64, f64, std::ops::Range<usize>)> {
    let edges: Vec<f64> = (0..=n_bins).map(|j| nearest_rank(sorted, j as f64 / n_bins as f64)).collect();
    let mut out = Vec::new();
    let mut start = 0;
    for j in 0..n_bins {
        let end = sorted.partition_point(|&v| v <= edges[j + 1]);
        let end = if j + 1 == n_bins { sorted.len() } else { end.max(start) };
        if end > start {
            out.push((edges[j], edges[j + 1], start..end));
        }
        start = end;
    }
    out
}

/// Reliability curve on score-quantile bins; only occupied bins are returned.
pub fn calibration_curve(xs: &[ScoredInstance], n_bins: usize) -> Result<Vec<CalibrationBin>, MetricError> {
    check_scores(xs)?;
    if n_bins == 0 {
        return Err(MetricError::TooFew(1));
    }
    let mut pairs: Vec<(f64, bool)> = xs.iter().map(|x| (x.p, x.y)).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let scores: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    Ok(quantile_bins(&scores, n_bins)
        .into_iter()
        .map(|(lower, upper, r)| {
            let slice = &pairs[r];
            let n = slice.len() as f64;
            CalibrationBin {
                lower,
                upper,
                mean_score: slice.iter().map(|p| p.0).sum::<f64>() / n,
                frequency: slice.iter().filter(|p| p.1).count() as f64 / n,
                count: slice.len(),
            }
        })
        .collect())
}

/// A single forecast target with its Gaussian predictive marginal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForecastPoint {
    pub mu: f64,
    pub sigma: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaBin {
    pub mean_sigma: f64,
    pub mean_abs_error: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastCalibration {
    pub levels: Vec<f64>,
    pub coverage: Vec<f64>,
    pub sigma_bins: Vec<SigmaBin>,
}

pub const COVERAGE_LEVELS: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];
pub const MIN_FORECAST_POINTS: usize = 100;

/// Central-interval coverage at each level in [`COVERAGE_LEVELS`], and mean
/// absolute error against predicted sigma on sigma-quantile bins restricted
/// to the 1st..99th percentile of sigma.
pub fn forecast_calibration(points: &[ForecastPoint], n_bins: usize) -> Result<ForecastCalibration, MetricError> {
    if points.len() < MIN_FORECAST_POINTS {
        return Err(MetricError::TooFew(MIN_FORECAST_POINTS));
    }
    let n = points.len() as f64;
    let coverage = COVERAGE_LEVELS
        .iter()
        .map(|&level| {
            let z = gaussian_quantile(0.5 + level / 2.0);
            points.iter().filter(|p| (p.y - p.mu).abs() <= z * p.sigma).count() as f64 / n
        })
        .collect();

    let mut by_sigma: Vec<(f64, f64)> = points.iter().map(|p| (p.sigma, (p.y - p.mu).abs())).collect();
    by_sigma.sort_by(|a, b| a.0.total_cmp(&b.0));
    let sigmas: Vec<f64> = by_sigma.iter().map(|p| p.0).collect();
    let (lo, hi) = (nearest_rank(&sigmas, 0.01), nearest_rank(&sigmas, 0.99));
    let kept: Vec<(f64, f64)> = by_sigma.into_iter().filter(|p| p.0 >= lo && p.0 <= hi).collect();
    let kept_sigmas: Vec<f64> = kept.iter().map(|p| p.0).collect();
    let sigma_bins = quantile_bins(&kept_sigmas, n_bins.max(1))
        .into_iter()
        .map(|(_, _, r)| {
            let slice = &kept[r];
            let m = slice.len() as f64;
            SigmaBin {
                mean_sigma: slice.iter().map(|p| p.0).sum::<f64>() / m,
                mean_abs_error: slice.iter().map(|p| p.1).sum::<f64>() / m,
                count: slice.len(),
            }
        })
        .collect();
    Ok(ForecastCalibration {
        levels: COVERAGE_LEVELS.to_vec(),
        coverage,
        sigma_bins,
    })
}
