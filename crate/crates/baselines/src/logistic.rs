//! L2-regularised logistic regression fitted by gradient descent.

use ivos_metrics::average_precision_of;
use serde::{Deserialize, Serialize};

use crate::BaselineError;

pub const C_GRID: [f64; 5] = [0.1, 1.0, 10.0, 100.0, 1000.0];
pub const GRAD_TOLERANCE: f64 = 1e-6;
pub const MAX_ITERATIONS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    /// Inverse regularisation strength.
    pub c: f64,
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    /// Weights on standardized features.
    pub weights: Vec<f64>,
    pub bias: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(z))` without overflow.
fn log1p_exp(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

impl LogisticModel {
    pub fn logit(&self, x: &[f64]) -> f64 {
        self.bias
            + x.iter()
                .zip(&self.mean)
                .zip(&self.scale)
                .zip(&self.weights)
                .map(|(((v, m), s), w)| w * (v - m) / s)
                .sum::<f64>()
    }

    pub fn predict_proba(&self, x: &[f64]) -> f64 {
        sigmoid(self.logit(x))
    }
}

pub(crate) fn check_classes(y: &[bool]) -> Result<(), BaselineError> {
    if y.iter().all(|&v| v) || y.iter().all(|&v| !v) {
        return Err(BaselineError::SingleClass);
    }
    Ok(())
}

fn column_stats(x: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let d = x[0].len();
    let n = x.len() as f64;
    let mut mean = vec![0.0; d];
    for row in x {
        mean.iter_mut().zip(row).for_each(|(m, v)| *m += v / n);
    }
    let mut var = vec![0.0; d];
    for row in x {
        var.iter_mut().zip(row).zip(&mean).for_each(|((s, v), m)| *s += (v - m) * (v - m) / n);
    }
    let scale = var.into_iter().map(|v| if v > 0.0 { v.sqrt() } else { 1.0 }).collect();
    (mean, scale)
}

/// Minimises `mean log-loss + |w|^2 / (2 C n)` (the usual
/// `|w|^2 / 2 + C * sum log-loss` divided by `C n`); the bias is not
/// penalised. Steps are Barzilai-Borwein guesses with Armijo backtracking.
pub fn fit_logistic(x: &[Vec<f64>], y: &[bool], c: f64) -> Result<LogisticModel, BaselineError> {
    if x.is_empty() || x.len() != y.len() {
        return Err(BaselineError::Shape(format!("{} rows, {} labels", x.len(), y.len())));
    }
    check_classes(y)?;
    if !(c > 0.0) {
        return Err(BaselineError::Config(format!("C must be positive, got {c}")));
    }
    let (mean, scale) = column_stats(x);
    let d = mean.len();
    let n = x.len();
    let z: Vec<Vec<f64>> = x
        .iter()
        .map(|r| r.iter().zip(&mean).zip(&scale).map(|((v, m), s)| (v - m) / s).collect())
        .collect();
    let lambda = 1.0 / (c * n as f64);
    let target: Vec<f64> = y.iter().map(|&v| f64::from(u8::from(v))).collect();

    // theta = [w..., b]
    let objective = |theta: &[f64]| -> f64 {
        let (w, b) = (&theta[..d], theta[d]);
        let loss: f64 = z
            .iter()
            .zip(&target)
            .map(|(r, t)| {
                let s = b + r.iter().zip(w).map(|(a, b)| a * b).sum::<f64>();
                log1p_exp(s) - t * s
            })
            .sum::<f64>()
            / n as f64;
        loss + 0.5 * lambda * w.iter().map(|v| v * v).sum::<f64>()
    };
    let gradient = |theta: &[f64]| -> Vec<f64> {
        let (w, b) = (&theta[..d], theta[d]);
        let mut g = vec![0.0; d + 1];
        for (r, t) in z.iter().zip(&target) {
            let s = b + r.iter().zip(w).map(|(a, b)| a * b).sum::<f64>();
            let e = sigmoid(s) - t;
            g[..d].iter_mut().zip(r).for_each(|(gi, ri)| *gi += e * ri);
            g[d] += e;
        }
        g.iter_mut().for_each(|v| *v /= n as f64);
        g[..d].iter_mut().zip(w).for_each(|(gi, wi)| *gi += lambda * wi);
        g
    };
    let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();

    let prior = target.iter().sum::<f64>() / n as f64;
    let mut theta = vec![0.0; d + 1];
    theta[d] = (prior / (1.0 - prior)).ln();
    let mut f = objective(&theta);
    let mut g = gradient(&theta);
    let mut step = 1.0;
    let mut iterations = 0;
    let mut converged = norm(&g) <= GRAD_TOLERANCE;
    while !converged && iterations < MAX_ITERATIONS {
        iterations += 1;
        let gg = g.iter().map(|v| v * v).sum::<f64>();
        let mut t = step;
        let (next, f_next) = loop {
            let cand: Vec<f64> = theta.iter().zip(&g).map(|(p, gi)| p - t * gi).collect();
            let fc = objective(&cand);
            if fc <= f - 1e-4 * t * gg || t < 1e-12 {
                break (cand, fc);
            }
            t *= 0.5;
        };
        let g_next = gradient(&next);
        let s: Vec<f64> = next.iter().zip(&theta).map(|(a, b)| a - b).collect();
        let r: Vec<f64> = g_next.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sr: f64 = s.iter().zip(&r).map(|(a, b)| a * b).sum();
        step = if sr > 0.0 { s.iter().map(|v| v * v).sum::<f64>() / sr } else { 1.0 };
        theta = next;
        f = f_next;
        g = g_next;
        converged = norm(&g) <= GRAD_TOLERANCE;
    }
    if !converged {
        log::warn!("logistic C={c}: gradient norm {:.2e} after {iterations} iterations", norm(&g));
    }
    Ok(LogisticModel {
        c,
        mean,
        scale,
        weights: theta[..d].to_vec(),
        bias: theta[d],
        iterations,
        converged,
    })
}

/// Fits every `C` and keeps the highest validation average precision; the
/// earliest value wins ties.
pub fn train_logistic(
    x: &[Vec<f64>],
    y: &[bool],
    val_x: &[Vec<f64>],
    val_y: &[bool],
    c_grid: &[f64],
) -> Result<LogisticModel, BaselineError> {
    let mut best: Option<(f64, LogisticModel)> = None;
    for &c in c_grid {
        let m = fit_logistic(x, y, c)?;
        let scores: Vec<f64> = val_x.iter().map(|r| m.predict_proba(r)).collect();
        let ap = average_precision_of(&scores, val_y).map_err(|_| BaselineError::SingleClass)?;
        log::info!("logistic C={c}: val AP {ap:.4} ({} iterations)", m.iterations);
        if best.as_ref().is_none_or(|(b, _)| ap > *b) {
            best = Some((ap, m));
        }
    }
    best.map(|b| b.1).ok_or_else(|| BaselineError::Config("empty C grid".into()))
}
