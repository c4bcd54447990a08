//! Gaussian predictive distributions and the switch-readiness probability:
//! the product over evaluation times and enabled variables of the predictive
//! mass inside each normal range.

use serde::{Deserialize, Serialize};

use crate::criteria::CriteriaSet;
use crate::error::ReadinessError;
use crate::taskgen::TaskConfig;
use crate::vital::{PerVital, VitalKind};

/// Per-variable Gaussian marginals on a uniform time grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictiveDistribution {
    pub tau: f64,
    pub grid_times: Vec<f64>,
    /// Row-major `C x G`, native units.
    pub mu: Vec<f64>,
    /// Row-major `C x G`, native units, strictly positive.
    pub sigma: Vec<f64>,
}

impl PredictiveDistribution {
    pub fn grid_len(&self) -> usize {
        self.grid_times.len()
    }

    pub fn span(&self) -> (f64, f64) {
        (self.grid_times[0], self.grid_times[self.grid_times.len() - 1])
    }

    pub fn node(&self, kind: VitalKind, g: usize) -> (f64, f64) {
        let i = kind.index() * self.grid_len() + g;
        (self.mu[i], self.sigma[i])
    }

    /// `(mu, sigma)` at an arbitrary time by linear interpolation between the
    /// neighbouring grid nodes; exact at nodes.
    pub fn at(&self, kind: VitalKind, t: f64) -> Result<(f64, f64), ReadinessError> {
        let (start, end) = self.span();
        if !(t >= start && t <= end) {
            return Err(ReadinessError::OutOfSpan { t, start, end });
        }
        let g = &self.grid_times;
        let i = g.partition_point(|&x| x <= t);
        // g[i - 1] <= t < g[i]
        let left = i - 1;
        if g[left] == t || left + 1 == g.len() {
            return Ok(self.node(kind, left));
        }
        let w = (t - g[left]) / (g[left + 1] - g[left]);
        let (m0, s0) = self.node(kind, left);
        let (m1, s1) = self.node(kind, left + 1);
        Ok(((1.0 - w) * m0 + w * m1, (1.0 - w) * s0 + w * s1))
    }
}

/// Standard normal CDF.
pub fn gaussian_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// Standard normal quantile (Acklam's rational approximation polished with
/// one Halley step).
pub fn gaussian_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    let p_low = 0.02425;
    let x = if p < p_low {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - p_low {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    let e = gaussian_cdf(x) - p;
    let u = e * (2.0 * std::f64::consts::PI).sqrt() * (x * x / 2.0).exp();
    x - u / (1.0 + x * u / 2.0)
}

/// `P(lo <= X <= hi)` for `X ~ N(mu, sigma^2)`; `None` bounds are infinite.
pub fn in_range_prob(mu: f64, sigma: f64, lo: Option<f64>, hi: Option<f64>) -> Result<f64, ReadinessError> {
    if !(sigma > 0.0) {
        return Err(ReadinessError::NonPositiveSigma(sigma));
    }
    let z_lo = lo.map_or(f64::NEG_INFINITY, |l| (l - mu) / sigma);
    let z_hi = hi.map_or(f64::INFINITY, |h| (h - mu) / sigma);
    // Evaluate in the lower tail where the CDF has full relative precision.
    let p = if z_lo > 0.0 {
        gaussian_cdf(-z_lo) - gaussian_cdf(-z_hi)
    } else {
        gaussian_cdf(z_hi) - gaussian_cdf(z_lo)
    };
    Ok(p.clamp(0.0, 1.0))
}

/// Switch-readiness probability with its factor table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReadinessResult {
    pub probability: f64,
    /// Absolute evaluation times (hours since admission), one per interval.
    pub evaluation_times: Vec<f64>,
    /// Per interval, the in-range probability of each enabled variable.
    pub factors: Vec<PerVital<Option<f64>>>,
}

impl ReadinessResult {
    pub fn log_probability(&self) -> f64 {
        self.factors
            .iter()
            .flat_map(|row| VitalKind::ALL.into_iter().filter_map(move |k| row[k]))
            .map(f64::ln)
            .sum()
    }
}

/// Evaluates the criteria at the centres of the aggregation intervals.
pub fn switch_prob(
    dist: &PredictiveDistribution,
    criteria: &CriteriaSet,
    cfg: &TaskConfig,
) -> Result<ReadinessResult, ReadinessError> {
    criteria.validate()?;
    let times: Vec<f64> = cfg
        .interval_centres()
        .into_iter()
        .map(|c| dist.tau + c)
        .collect();
    let mut probability = 1.0;
    let mut factors = Vec::with_capacity(times.len());
    for &t in &times {
        let mut row = PerVital::from_fn(|_| None);
        for kind in criteria.enabled_kinds() {
            let (mu, sigma) = dist.at(kind, t)?;
            let r = criteria.ranges[kind];
            let p = in_range_prob(mu, sigma, r.lo, r.hi)?;
            probability *= p;
            row[kind] = Some(p);
        }
        factors.push(row);
    }
    Ok(ReadinessResult {
        probability,
        evaluation_times: times,
        factors,
    })
}
