//! Seeded synthetic cohort generator.
//!
//! Each encounter follows a latent severity `s(t)` in `[0, 1]`. Recovering
//! patients decay logistically toward 0, the rest stay high. Vital means are
//! a per-patient healthy baseline plus a severity offset and a small daily
//! rhythm; around the mean sits an Ornstein-Uhlenbeck deviation, white
//! measurement noise and occasional single-sample spikes. Sampling times are
//! a Poisson process per vital. All randomness for encounter `i` comes from
//! `indexed_hash(seed, i)`, so output does not depend on scheduling.

use chrono::{Days, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Gamma, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{CohortDataset, Encounter, Measurement, PlausibleRanges, PrescriptionOrder, Route};
use crate::error::DataError;
use crate::hashing::{fnv1a, indexed_hash};
use crate::vital::{PerVital, VitalKind};

/// Fixed physiology of one vital sign.
#[derive(Debug, Clone, Copy)]
struct VitalModel {
    baseline: f64,
    between_patient_sd: f64,
    /// Shift of the mean at full severity.
    severity_offset: f64,
    daily_amplitude: f64,
    measurement_sd: f64,
    decimals: i32,
}

fn vital_model(kind: VitalKind) -> VitalModel {
    match kind {
        VitalKind::HeartRate => VitalModel {
            baseline: 75.0,
            between_patient_sd: 6.0,
            severity_offset: 40.0,
            daily_amplitude: 3.0,
            measurement_sd: 1.5,
            decimals: 0,
        },
        VitalKind::RespiratoryRate => VitalModel {
            baseline: 15.0,
            between_patient_sd: 1.2,
            severity_offset: 10.0,
            daily_amplitude: 0.0,
            measurement_sd: 0.7,
            decimals: 0,
        },
        VitalKind::Spo2 => VitalModel {
            baseline: 97.3,
            between_patient_sd: 0.8,
            severity_offset: -6.0,
            daily_amplitude: 0.0,
            measurement_sd: 0.5,
            decimals: 0,
        },
        VitalKind::SystolicBp => VitalModel {
            baseline: 128.0,
            between_patient_sd: 10.0,
            severity_offset: -38.0,
            daily_amplitude: 4.0,
            measurement_sd: 4.0,
            decimals: 0,
        },
        VitalKind::Temperature => VitalModel {
            baseline: 98.3,
            between_patient_sd: 0.3,
            severity_offset: 3.2,
            daily_amplitude: 0.3,
            measurement_sd: 0.15,
            decimals: 1,
        },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub n_encounters: usize,
    pub mean_stay_hours: f64,
    /// Fraction of patients whose severity resolves during the stay.
    pub recovery_fraction: f64,
    pub measurement_rate_per_day: PerVital<f64>,
    /// Per-sample probability of a transient spike.
    pub outlier_prob: f64,
    /// Stationary standard deviation of the mean-reverting deviation.
    pub noise_scale: PerVital<f64>,
    /// Mean-reversion time constant of the deviation, hours.
    pub reversion_hours: f64,
    pub first_admit_date: NaiveDate,
    pub admit_window_days: u32,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            n_encounters: 2400,
            mean_stay_hours: 192.0,
            recovery_fraction: 0.5,
            measurement_rate_per_day: PerVital {
                hr: 12.0,
                rr: 10.0,
                spo2: 12.0,
                sbp: 10.0,
                temp: 8.0,
            },
            outlier_prob: 0.02,
            noise_scale: PerVital {
                hr: 4.0,
                rr: 1.0,
                spo2: 0.7,
                sbp: 6.0,
                temp: 0.25,
            },
            reversion_hours: 4.0,
            first_admit_date: NaiveDate::from_ymd_opt(2021, 1, 1).expect("valid date"),
            admit_window_days: 1095,
            seed: 7,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: String| Err(DataError::Config(m));
        if self.n_encounters < 1 {
            return bad("n_encounters must be at least 1".into());
        }
        if !(self.mean_stay_hours > 48.0) {
            return bad(format!("mean_stay_hours must exceed 48, got {}", self.mean_stay_hours));
        }
        if !(0.0..=1.0).contains(&self.recovery_fraction) {
            return bad(format!("recovery_fraction must lie in [0, 1], got {}", self.recovery_fraction));
        }
        if !(0.0..=1.0).contains(&self.outlier_prob) {
            return bad(format!("outlier_prob must lie in [0, 1], got {}", self.outlier_prob));
        }
        for (kind, &r) in self.measurement_rate_per_day.iter() {
            if !(r > 0.0 && r.is_finite()) {
                return bad(format!("measurement_rate_per_day.{kind} must be positive, got {r}"));
            }
        }
        for (kind, &s) in self.noise_scale.iter() {
            if !(s > 0.0 && s.is_finite()) {
                return bad(format!("noise_scale.{kind} must be positive, got {s}"));
            }
        }
        if !(self.reversion_hours > 0.0) {
            return bad(format!("reversion_hours must be positive, got {}", self.reversion_hours));
        }
        if self.admit_window_days == 0 {
            return bad("admit_window_days must be at least 1".into());
        }
        Ok(())
    }

    /// Short content hash recorded as cohort provenance.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        format!("synth:{:016x}", fnv1a(json.as_bytes()))
    }
}

#[derive(Debug, Clone, Copy)]
enum Course {
    /// Logistic decay: `s0 / (1 + exp(k (t - midpoint)))`.
    Recovering { s0: f64, midpoint: f64, rate: f64 },
    Persistent { s0: f64 },
}

impl Course {
    fn severity(&self, t: f64) -> f64 {
        match *self {
            Course::Recovering { s0, midpoint, rate } => s0 / (1.0 + (rate * (t - midpoint)).exp()),
            Course::Persistent { s0 } => s0,
        }
    }
}

fn round_to(x: f64, decimals: i32) -> f64 {
    let f = 10f64.powi(decimals);
    (x * f).round() / f
}

fn poisson_times(rng: &mut ChaCha8Rng, rate_per_hour: f64, end: f64) -> Vec<f64> {
    let gap = Exp::new(rate_per_hour).expect("positive rate");
    let mut out = Vec::new();
    let mut t = gap.sample(rng);
    while t <= end {
        // Minute resolution, as charted observations are.
        out.push((t * 60.0).round() / 60.0);
        t += gap.sample(rng);
    }
    out
}

fn generate_encounter(cfg: &GeneratorConfig, index: usize) -> Encounter {
    let mut rng = ChaCha8Rng::seed_from_u64(indexed_hash(cfg.seed, index as u64));
    let ranges = PlausibleRanges::default();
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");

    let admit_offset = rng.random_range(0..cfg.admit_window_days);
    let admit_date = cfg.first_admit_date + Days::new(u64::from(admit_offset));

    let stay_shape = 2.5;
    let stay = Gamma::new(stay_shape, (cfg.mean_stay_hours - 24.0) / stay_shape).expect("valid gamma");
    let mut length = 24.0 + stay.sample(&mut rng);

    let recovering = rng.random_bool(cfg.recovery_fraction);
    let (course, iv_end) = if recovering {
        let s0: f64 = rng.random_range(0.7..1.0);
        let midpoint = rng.random_range(0.15..0.6) * length;
        let rate = rng.random_range(0.06..0.25);
        // Severity crosses 0.2 here; the IV course outlasts it by 0.5-3 days.
        let settled = midpoint + (s0 / 0.2 - 1.0).ln() / rate;
        let iv_end = settled.max(12.0) + rng.random_range(12.0..72.0);
        length = length.max(iv_end + rng.random_range(12.0..72.0));
        (Course::Recovering { s0, midpoint, rate }, iv_end)
    } else {
        (Course::Persistent { s0: rng.random_range(0.45..1.0) }, length)
    };
    let length = (length * 4.0).round() / 4.0;
    let iv_end = iv_end.min(length);

    let mut orders = vec![PrescriptionOrder {
        drug: "antibiotic".into(),
        route: Route::Iv,
        start_hours: 0.0,
        end_hours: (iv_end * 4.0).round() / 4.0,
    }];
    if recovering && iv_end < length && rng.random_bool(0.9) {
        orders.push(PrescriptionOrder {
            drug: "antibiotic".into(),
            route: Route::Oral,
            start_hours: orders[0].end_hours,
            end_hours: length,
        });
    }

    let theta = 1.0 / cfg.reversion_hours;
    let mut measurements = Vec::new();
    for kind in VitalKind::ALL {
        let m = vital_model(kind);
        let ou_sd = cfg.noise_scale[kind];
        let baseline = m.baseline + m.between_patient_sd * std_normal.sample(&mut rng);
        let phase = rng.random_range(0.0..std::f64::consts::TAU);
        let times = poisson_times(&mut rng, cfg.measurement_rate_per_day[kind] / 24.0, length);
        let mut dev = ou_sd * std_normal.sample(&mut rng);
        let mut prev_t = 0.0;
        for t in times {
            let decay = (-theta * (t - prev_t)).exp();
            dev = dev * decay + ou_sd * (1.0 - decay * decay).sqrt() * std_normal.sample(&mut rng);
            prev_t = t;
            let rhythm = m.daily_amplitude * (std::f64::consts::TAU * t / 24.0 + phase).sin();
            let mean = baseline + m.severity_offset * course.severity(t) + rhythm;
            let mut value = mean + dev + m.measurement_sd * std_normal.sample(&mut rng);
            if rng.random_bool(cfg.outlier_prob) {
                let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                value += sign * rng.random_range(4.0..8.0) * ou_sd;
            }
            let value = ranges.clip(kind, round_to(value, m.decimals));
            measurements.push(Measurement::new(t, kind, value));
        }
    }

    let mut e = Encounter {
        encounter_id: format!("enc{index:05}"),
        admit_date,
        length_hours: length,
        measurements,
        orders,
    };
    e.sort_measurements();
    e
}

/// Generates `cfg.n_encounters` encounters; identical output for identical configs.
pub fn generate_cohort(cfg: &GeneratorConfig) -> Result<CohortDataset, DataError> {
    cfg.validate()?;
    let encounters: Vec<Encounter> = (0..cfg.n_encounters)
        .into_par_iter()
        .map(|i| generate_encounter(cfg, i))
        .collect();
    Ok(CohortDataset {
        encounters,
        provenance: cfg.fingerprint(),
    })
}

/// Cohort-level counts in the style of a baseline-characteristics table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSummary {
    pub n_encounters: usize,
    pub mean_length_hours: f64,
    pub mean_measurements_per_admission: PerVital<f64>,
    pub n_iv_orders: usize,
    pub n_oral_orders: usize,
}

pub fn describe_cohort(d: &CohortDataset) -> Result<CohortSummary, DataError> {
    if d.is_empty() {
        return Err(DataError::EmptyCohort);
    }
    let n = d.len() as f64;
    let mut counts = PerVital::<usize>::default();
    let mut n_iv = 0;
    let mut n_oral = 0;
    for e in &d.encounters {
        for m in &e.measurements {
            counts[m.kind] += 1;
        }
        for o in &e.orders {
            match o.route {
                Route::Iv => n_iv += 1,
                Route::Oral => n_oral += 1,
            }
        }
    }
    Ok(CohortSummary {
        n_encounters: d.len(),
        mean_length_hours: d.encounters.iter().map(|e| e.length_hours).sum::<f64>() / n,
        mean_measurements_per_admission: counts.map(|_, &c| c as f64 / n),
        n_iv_orders: n_iv,
        n_oral_orders: n_oral,
    })
}
