//! Functional encoding of a context set onto the internal grid: per variable
//! a density channel and a kernel-weighted value channel.

use ivos_core::{Measurement, PerVital, VitalKind};
use ivos_tensor::Tensor;

use crate::config::{GridSpec, ModelConfig};
use crate::ModelError;

/// Per-variable affine standardization `(x - mean) / std`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Standardizer {
    pub mean: f64,
    pub std: f64,
}

impl Standardizer {
    pub const IDENTITY: Standardizer = Standardizer { mean: 0.0, std: 1.0 };

    pub fn forward(&self, x: f64) -> f64 {
        (x - self.mean) / self.std
    }

    pub fn inverse(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }
}

/// Mean and standard deviation per variable over the given measurements;
/// variables without spread fall back to unit scale.
pub fn fit_standardization<'a>(ms: impl IntoIterator<Item = &'a Measurement>) -> PerVital<Standardizer> {
    let mut sum = PerVital::<f64>::default();
    let mut sq = PerVital::<f64>::default();
    let mut n = PerVital::<f64>::default();
    for m in ms {
        sum[m.kind] += m.value;
        sq[m.kind] += m.value * m.value;
        n[m.kind] += 1.0;
    }
    PerVital::from_fn(|k| {
        if n[k] == 0.0 {
            return Standardizer::IDENTITY;
        }
        let mean = sum[k] / n[k];
        let var = (sq[k] / n[k] - mean * mean).max(0.0);
        let std = var.sqrt();
        Standardizer {
            mean,
            std: if std > 1e-12 { std } else { 1.0 },
        }
    })
}

/// Encoded context, shape `[2C, total_nodes]`: density channels for each
/// variable followed by value channels.
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionalEncoding {
    pub grid_times: Vec<f64>,
    pub values: Tensor,
}

pub fn encode(
    context: &[Measurement],
    tau: f64,
    cfg: &ModelConfig,
    standardization: &PerVital<Standardizer>,
) -> Result<FunctionalEncoding, ModelError> {
    encode_on(context, tau, &cfg.grid(), cfg.rbf_lengthscale_hours, standardization)
}

pub(crate) fn encode_on(
    context: &[Measurement],
    tau: f64,
    grid: &GridSpec,
    lengthscale: f64,
    standardization: &PerVital<Standardizer>,
) -> Result<FunctionalEncoding, ModelError> {
    let g = grid.total_nodes;
    let c = VitalKind::COUNT;
    let times: Vec<f64> = (0..g).map(|j| grid.node_time(tau, j)).collect();
    let mut data = vec![0.0; 2 * c * g];
    let inv = 1.0 / (2.0 * lengthscale * lengthscale);
    let mut used = 0usize;
    for m in context.iter().filter(|m| m.t_hours < tau) {
        used += 1;
        let ch = m.kind.index();
        let x = standardization[m.kind].forward(m.value);
        for (j, &t) in times.iter().enumerate() {
            let d = t - m.t_hours;
            let w = (-d * d * inv).exp();
            data[ch * g + j] += w;
            data[(c + ch) * g + j] += x * w;
        }
    }
    if used == 0 {
        return Err(ModelError::EmptyContext);
    }
    Ok(FunctionalEncoding {
        grid_times: times,
        values: Tensor::new(vec![2 * c, g], data)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn id() -> PerVital<Standardizer> {
        PerVital::from_fn(|_| Standardizer::IDENTITY)
    }

    #[test]
    fn point_on_a_node_peaks_there() {
        let cfg = ModelConfig::full();
        let grid = cfg.grid();
        let tau = 60.0;
        let t = grid.node_time(tau, 40);
        let enc = encode(&[Measurement::new(t, VitalKind::HeartRate, 2.0)], tau, &cfg, &id()).unwrap();
        let row = &enc.values.data()[..grid.total_nodes];
        assert_eq!(row[40], 1.0);
        assert!(row.iter().all(|&v| v <= 1.0 && v >= 0.0));
        assert!((row[42] - (-0.5f64).exp()).abs() < 1e-15);
        let value_row = enc.values.row(VitalKind::COUNT);
        assert_eq!(value_row[40], 2.0);
        // No SpO2 context: both SpO2 channels vanish.
        let s = VitalKind::Spo2.index();
        assert!(enc.values.row(s).iter().all(|&v| v == 0.0));
        assert!(enc.values.row(VitalKind::COUNT + s).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn duplicate_points_double_the_channels() {
        let cfg = ModelConfig::full();
        let p = Measurement::new(31.3, VitalKind::Temperature, 1.7);
        let one = encode(&[p], 40.0, &cfg, &id()).unwrap();
        let two = encode(&[p, p], 40.0, &cfg, &id()).unwrap();
        for (a, b) in one.values.data().iter().zip(two.values.data()) {
            assert_eq!(2.0 * a, *b);
        }
    }

    #[test]
    fn empty_context_is_an_error() {
        let cfg = ModelConfig::full();
        assert!(matches!(encode(&[], 50.0, &cfg, &id()), Err(ModelError::EmptyContext)));
        // Points at or after tau carry no context.
        let late = [Measurement::new(50.0, VitalKind::HeartRate, 80.0)];
        assert!(matches!(encode(&late, 50.0, &cfg, &id()), Err(ModelError::EmptyContext)));
    }

    #[test]
    fn standardization_fit() {
        let ms = [
            Measurement::new(0.0, VitalKind::HeartRate, 70.0),
            Measurement::new(1.0, VitalKind::HeartRate, 90.0),
            Measurement::new(1.0, VitalKind::Temperature, 98.0),
        ];
        let s = fit_standardization(&ms);
        assert_eq!(s.hr, Standardizer { mean: 80.0, std: 10.0 });
        assert_eq!(s.temp.std, 1.0);
        assert_eq!(s.rr, Standardizer::IDENTITY);
        assert_eq!(s.hr.inverse(s.hr.forward(123.0)), 123.0);
    }
}
