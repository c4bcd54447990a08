//! The five monitored vital signs and a fixed-size per-vital container.

use std::fmt;
use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

/// One of the monitored vital-sign variables.
///
/// The declaration order is the channel order used everywhere (encoder
/// channels, one-hot encodings, report columns).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum VitalKind {
    /// Heart rate, bpm.
    #[serde(rename = "hr")]
    HeartRate,
    /// Respiratory rate, breaths/min.
    #[serde(rename = "rr")]
    RespiratoryRate,
    /// Oxygen saturation, %.
    #[serde(rename = "spo2")]
    Spo2,
    /// Systolic blood pressure, mmHg.
    #[serde(rename = "sbp")]
    SystolicBp,
    /// Temperature, °F.
    #[serde(rename = "temp")]
    Temperature,
}

impl VitalKind {
    pub const COUNT: usize = 5;

    pub const ALL: [VitalKind; VitalKind::COUNT] = [
        VitalKind::HeartRate,
        VitalKind::RespiratoryRate,
        VitalKind::Spo2,
        VitalKind::SystolicBp,
        VitalKind::Temperature,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<VitalKind> {
        Self::ALL.get(i).copied()
    }

    /// Short code used in files and on the wire.
    pub fn code(self) -> &'static str {
        match self {
            VitalKind::HeartRate => "hr",
            VitalKind::RespiratoryRate => "rr",
            VitalKind::Spo2 => "spo2",
            VitalKind::SystolicBp => "sbp",
            VitalKind::Temperature => "temp",
        }
    }

    pub fn from_code(code: &str) -> Option<VitalKind> {
        Self::ALL.into_iter().find(|k| k.code() == code)
    }

    pub fn label(self) -> &'static str {
        match self {
            VitalKind::HeartRate => "HR",
            VitalKind::RespiratoryRate => "RR",
            VitalKind::Spo2 => "SpO2",
            VitalKind::SystolicBp => "SBP",
            VitalKind::Temperature => "Temp",
        }
    }

    pub fn unit(self) -> &'static str {
        match self {
            VitalKind::HeartRate => "bpm",
            VitalKind::RespiratoryRate => "breaths/min",
            VitalKind::Spo2 => "%",
            VitalKind::SystolicBp => "mmHg",
            VitalKind::Temperature => "°F",
        }
    }

    /// One-hot encoding in channel order.
    pub fn one_hot(self) -> [f64; VitalKind::COUNT] {
        let mut v = [0.0; VitalKind::COUNT];
        v[self.index()] = 1.0;
        v
    }
}

impl fmt::Display for VitalKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

/// A value for each vital sign, serialized as an object keyed by vital code.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PerVital<T> {
    pub hr: T,
    pub rr: T,
    pub spo2: T,
    pub sbp: T,
    pub temp: T,
}

impl<T> PerVital<T> {
    pub fn from_fn(mut f: impl FnMut(VitalKind) -> T) -> Self {
        PerVital {
            hr: f(VitalKind::HeartRate),
            rr: f(VitalKind::RespiratoryRate),
            spo2: f(VitalKind::Spo2),
            sbp: f(VitalKind::SystolicBp),
            temp: f(VitalKind::Temperature),
        }
    }

    pub fn map<U>(&self, mut f: impl FnMut(VitalKind, &T) -> U) -> PerVital<U> {
        PerVital::from_fn(|k| f(k, &self[k]))
    }

    pub fn iter(&self) -> impl Iterator<Item = (VitalKind, &T)> {
        VitalKind::ALL.into_iter().map(move |k| (k, &self[k]))
    }
}

impl<T> Index<VitalKind> for PerVital<T> {
    type Output = T;

    fn index(&self, kind: VitalKind) -> &T {
        match kind {
            VitalKind::HeartRate => &self.hr,
            VitalKind::RespiratoryRate => &self.rr,
            VitalKind::Spo2 => &self.spo2,
            VitalKind::SystolicBp => &self.sbp,
            VitalKind::Temperature => &self.temp,
        }
    }
}

impl<T> IndexMut<VitalKind> for PerVital<T> {
    fn index_mut(&mut self, kind: VitalKind) -> &mut T {
        match kind {
            VitalKind::HeartRate => &mut self.hr,
            VitalKind::RespiratoryRate => &mut self.rr,
            VitalKind::Spo2 => &mut self.spo2,
            VitalKind::SystolicBp => &mut self.sbp,
            VitalKind::Temperature => &mut self.temp,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ordering_is_stable() {
        for (i, k) in VitalKind::ALL.iter().enumerate() {
            assert_eq!(k.index(), i);
            assert_eq!(VitalKind::from_index(i), Some(*k));
            assert_eq!(VitalKind::from_code(k.code()), Some(*k));
        }
        assert_eq!(VitalKind::from_index(5), None);
        assert_eq!(VitalKind::Spo2.one_hot(), [0.0, 0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn serde_codes() {
        let s = serde_json::to_string(&VitalKind::ALL).unwrap();
        assert_eq!(s, r#"["hr","rr","spo2","sbp","temp"]"#);
    }
}
