//! Clinical switch-readiness criteria and what-if overrides.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::ReadinessError;
use crate::vital::{PerVital, VitalKind};

/// A normal range. `None` bounds are unbounded; bounds are inclusive unless
/// flagged open.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: Option<f64>,
    pub hi: Option<f64>,
    #[serde(default, skip_serializing_if = "is_false")]
    pub lo_open: bool,
    #[serde(default, skip_serializing_if = "is_false")]
    pub hi_open: bool,
}

fn is_false(b: &bool) -> bool {
    !*b
}

impl Interval {
    pub const UNBOUNDED: Interval = Interval {
        lo: None,
        hi: None,
        lo_open: false,
        hi_open: false,
    };

    pub fn closed(lo: f64, hi: f64) -> Self {
        Interval {
            lo: Some(lo),
            hi: Some(hi),
            lo_open: false,
            hi_open: false,
        }
    }

    /// `(lo, +inf)`.
    pub fn above(lo: f64) -> Self {
        Interval {
            lo: Some(lo),
            hi: None,
            lo_open: true,
            hi_open: false,
        }
    }

    pub fn lower(&self) -> f64 {
        self.lo.unwrap_or(f64::NEG_INFINITY)
    }

    pub fn upper(&self) -> f64 {
        self.hi.unwrap_or(f64::INFINITY)
    }

    pub fn contains(&self, x: f64) -> bool {
        let above = match self.lo {
            None => true,
            Some(lo) if self.lo_open => x > lo,
            Some(lo) => x >= lo,
        };
        let below = match self.hi {
            None => true,
            Some(hi) if self.hi_open => x < hi,
            Some(hi) => x <= hi,
        };
        above && below
    }

    pub fn is_valid(&self) -> bool {
        let finite = self.lo.map_or(true, f64::is_finite) && self.hi.map_or(true, f64::is_finite);
        finite && self.lower() < self.upper()
    }

    /// True when `self` contains every point of `other`.
    pub fn covers(&self, other: &Interval) -> bool {
        let lo_ok = match (self.lo, other.lo) {
            (None, _) => true,
            (Some(_), None) => false,
            (Some(a), Some(b)) => a < b || (a == b && (!self.lo_open || other.lo_open)),
        };
        let hi_ok = match (self.hi, other.hi) {
            (None, _) => true,
            (Some(_), None) => false,
            (Some(a), Some(b)) => a > b || (a == b && (!self.hi_open || other.hi_open)),
        };
        lo_ok && hi_ok
    }
}

/// Per-vital normal ranges with per-vital enable flags.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriteriaSet {
    pub ranges: PerVital<Interval>,
    pub enabled: PerVital<bool>,
}

impl CriteriaSet {
    /// Strict criteria used for the primary labels.
    pub fn strict() -> Self {
        CriteriaSet {
            ranges: PerVital {
                hr: Interval::closed(41.0, 90.0),
                rr: Interval::closed(9.0, 20.0),
                spo2: Interval::above(94.0),
                sbp: Interval::closed(101.0, 219.0),
                temp: Interval::closed(96.8, 100.4),
            },
            enabled: PerVital::from_fn(|_| true),
        }
    }

    /// Looser alternative used for the sensitivity rerun.
    pub fn loose() -> Self {
        CriteriaSet {
            ranges: PerVital {
                hr: Interval::closed(40.0, 131.0),
                rr: Interval::closed(8.0, 24.0),
                spo2: Interval::above(91.0),
                sbp: Interval::closed(90.0, 229.0),
                temp: Interval::closed(96.8, 100.58),
            },
            enabled: PerVital::from_fn(|_| true),
        }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "strict" => Some(Self::strict()),
            "loose" => Some(Self::loose()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), ReadinessError> {
        for kind in VitalKind::ALL {
            let r = self.ranges[kind];
            if self.enabled[kind] && !r.is_valid() {
                return Err(ReadinessError::InvertedInterval {
                    kind: kind.code().to_string(),
                    lo: r.lower(),
                    hi: r.upper(),
                });
            }
        }
        Ok(())
    }

    /// Whether a value satisfies the criterion for `kind`. Disabled variables
    /// always pass.
    pub fn satisfied(&self, kind: VitalKind, value: f64) -> bool {
        !self.enabled[kind] || self.ranges[kind].contains(value)
    }

    pub fn enabled_kinds(&self) -> impl Iterator<Item = VitalKind> + '_ {
        VitalKind::ALL.into_iter().filter(|k| self.enabled[*k])
    }
}

/// Replacement for one variable's criterion.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct VariableOverride {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interval: Option<Interval>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub enabled: Option<bool>,
}

/// What-if edits keyed by vital code, e.g. `{"rr": {"enabled": false}}`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CriteriaOverride(pub BTreeMap<VitalKind, VariableOverride>);

impl CriteriaOverride {
    pub fn disable(kind: VitalKind) -> Self {
        let mut m = BTreeMap::new();
        m.insert(
            kind,
            VariableOverride {
                interval: None,
                enabled: Some(false),
            },
        );
        CriteriaOverride(m)
    }

    pub fn set_interval(mut self, kind: VitalKind, interval: Interval) -> Self {
        self.0.entry(kind).or_default().interval = Some(interval);
        self
    }
}

/// Applies overrides without touching unaffected variables.
pub fn apply_overrides(
    criteria: &CriteriaSet,
    ov: &CriteriaOverride,
) -> Result<CriteriaSet, ReadinessError> {
    let mut out = *criteria;
    for (&kind, edit) in &ov.0 {
        if let Some(interval) = edit.interval {
            if !interval.is_valid() {
                return Err(ReadinessError::InvertedInterval {
                    kind: kind.code().to_string(),
                    lo: interval.lower(),
                    hi: interval.upper(),
                });
            }
            out.ranges[kind] = interval;
        }
        if let Some(enabled) = edit.enabled {
            out.enabled[kind] = enabled;
        }
    }
    Ok(out)
}
