//! Encounter data model, cohort file I/O, cleaning, truncation and the
//! temporal train/validation/test split.
//!
//! Preprocessing order is fixed: [`clean_measurements`] runs before
//! [`truncate_encounter`].

use std::collections::HashSet;
use std::io::{BufRead, Write};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::DataError;
use crate::hashing::keyed_hash;
use crate::vital::{PerVital, VitalKind};

/// Two weeks, the maximum encounter length kept after truncation.
pub const MAX_ENCOUNTER_HOURS: f64 = 336.0;

/// One vital-sign observation: time since admission, variable, value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    #[serde(rename = "t")]
    pub t_hours: f64,
    pub kind: VitalKind,
    pub value: f64,
}

impl Measurement {
    pub fn new(t_hours: f64, kind: VitalKind, value: f64) -> Self {
        Measurement {
            t_hours,
            kind,
            value,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Route {
    Iv,
    Oral,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrescriptionOrder {
    pub drug: String,
    pub route: Route,
    #[serde(rename = "start")]
    pub start_hours: f64,
    #[serde(rename = "end")]
    pub end_hours: f64,
}

/// A single hospital stay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Encounter {
    pub encounter_id: String,
    pub admit_date: NaiveDate,
    pub length_hours: f64,
    pub measurements: Vec<Measurement>,
    pub orders: Vec<PrescriptionOrder>,
}

impl Encounter {
    pub fn sort_measurements(&mut self) {
        self.measurements
            .sort_by(|a, b| a.t_hours.total_cmp(&b.t_hours));
    }

    pub fn measurements_of(&self, kind: VitalKind) -> impl Iterator<Item = &Measurement> {
        self.measurements.iter().filter(move |m| m.kind == kind)
    }
}

/// Closed interval of physically plausible values per vital.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlausibleRanges(pub PerVital<(f64, f64)>);

impl Default for PlausibleRanges {
    fn default() -> Self {
        PlausibleRanges(PerVital {
            hr: (10.0, 400.0),
            rr: (0.0, 120.0),
            spo2: (0.0, 100.0),
            sbp: (0.0, 400.0),
            temp: (50.0, 120.0),
        })
    }
}

impl PlausibleRanges {
    pub fn contains(&self, kind: VitalKind, value: f64) -> bool {
        let (lo, hi) = self.0[kind];
        value >= lo && value <= hi
    }

    pub fn clip(&self, kind: VitalKind, value: f64) -> f64 {
        let (lo, hi) = self.0[kind];
        value.clamp(lo, hi)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CohortDataset {
    pub encounters: Vec<Encounter>,
    /// Generator config hash or source file path.
    pub provenance: String,
}

impl CohortDataset {
    pub fn len(&self) -> usize {
        self.encounters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.encounters.is_empty()
    }

    pub fn get(&self, encounter_id: &str) -> Option<&Encounter> {
        self.encounters
            .iter()
            .find(|e| e.encounter_id == encounter_id)
    }

    /// Applies plausible-range cleaning then truncation to every encounter.
    pub fn preprocess(&self, ranges: &PlausibleRanges, max_hours: f64) -> CohortDataset {
        CohortDataset {
            encounters: self
                .encounters
                .iter()
                .map(|e| truncate_encounter(&clean_measurements(e, ranges), max_hours))
                .collect(),
            provenance: self.provenance.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
enum TempUnit {
    #[default]
    #[serde(rename = "F", alias = "f")]
    Fahrenheit,
    #[serde(rename = "C", alias = "c")]
    Celsius,
}

#[derive(Deserialize)]
struct EncounterRecord {
    encounter_id: String,
    admit_date: NaiveDate,
    length_hours: f64,
    measurements: Vec<Measurement>,
    orders: Vec<PrescriptionOrder>,
    #[serde(default)]
    temp_unit: TempUnit,
}

fn malformed(line: usize, field: &str, message: impl Into<String>) -> DataError {
    DataError::Malformed {
        line,
        field: field.to_string(),
        message: message.into(),
    }
}

fn parse_record(line_no: usize, line: &str) -> Result<Encounter, DataError> {
    let de = &mut serde_json::Deserializer::from_str(line);
    let rec: EncounterRecord = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        malformed(line_no, &path, e.inner().to_string())
    })?;

    if !(rec.length_hours.is_finite() && rec.length_hours > 0.0) {
        return Err(malformed(line_no, "length_hours", "must be a positive number"));
    }
    let mut measurements = rec.measurements;
    for (i, m) in measurements.iter_mut().enumerate() {
        if !(m.t_hours.is_finite() && m.t_hours >= 0.0) {
            return Err(malformed(
                line_no,
                &format!("measurements[{i}].t"),
                "must be a non-negative number",
            ));
        }
        if !m.value.is_finite() {
            return Err(malformed(
                line_no,
                &format!("measurements[{i}].value"),
                "must be finite",
            ));
        }
        if m.kind == VitalKind::Temperature && rec.temp_unit == TempUnit::Celsius {
            m.value = m.value * 9.0 / 5.0 + 32.0;
        }
    }
    for (i, o) in rec.orders.iter().enumerate() {
        if !(o.start_hours.is_finite() && o.end_hours.is_finite()) || o.start_hours > o.end_hours
        {
            return Err(malformed(
                line_no,
                &format!("orders[{i}]"),
                "requires finite start <= end",
            ));
        }
    }
    let mut enc = Encounter {
        encounter_id: rec.encounter_id,
        admit_date: rec.admit_date,
        length_hours: rec.length_hours,
        measurements,
        orders: rec.orders,
    };
    enc.sort_measurements();
    Ok(enc)
}

/// Reads a JSON-lines cohort file. Blank lines are skipped; line numbers in
/// errors are 1-based.
pub fn parse_cohort<R: BufRead>(source: R, provenance: &str) -> Result<CohortDataset, DataError> {
    let mut seen = HashSet::new();
    let mut encounters = Vec::new();
    for (i, line) in source.lines().enumerate() {
        let line = line?;
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let enc = parse_record(line_no, &line)?;
        if !seen.insert(enc.encounter_id.clone()) {
            return Err(DataError::DuplicateId {
                line: line_no,
                id: enc.encounter_id,
            });
        }
        encounters.push(enc);
    }
    Ok(CohortDataset {
        encounters,
        provenance: provenance.to_string(),
    })
}

/// Writes one encounter per line. Temperatures are always written in °F.
pub fn write_cohort<W: Write>(cohort: &CohortDataset, mut out: W) -> Result<(), DataError> {
    for e in &cohort.encounters {
        serde_json::to_writer(&mut out, e).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Drops measurements outside the plausible range for their kind.
pub fn clean_measurements(e: &Encounter, ranges: &PlausibleRanges) -> Encounter {
    Encounter {
        measurements: e
            .measurements
            .iter()
            .filter(|m| ranges.contains(m.kind, m.value))
            .copied()
            .collect(),
        ..e.clone()
    }
}

/// Cuts an encounter at `max_hours`; orders straddling the boundary are
/// clipped, orders starting after it are dropped.
pub fn truncate_encounter(e: &Encounter, max_hours: f64) -> Encounter {
    assert!(max_hours > 0.0, "max_hours must be positive");
    Encounter {
        encounter_id: e.encounter_id.clone(),
        admit_date: e.admit_date,
        length_hours: e.length_hours.min(max_hours),
        measurements: e
            .measurements
            .iter()
            .filter(|m| m.t_hours <= max_hours)
            .copied()
            .collect(),
        orders: e
            .orders
            .iter()
            .filter(|o| o.start_hours <= max_hours)
            .map(|o| PrescriptionOrder {
                end_hours: o.end_hours.min(max_hours),
                ..o.clone()
            })
            .collect(),
    }
}

#[derive(Debug, Clone)]
pub struct Splits {
    pub train: CohortDataset,
    pub val: CohortDataset,
    pub test: CohortDataset,
}

/// Temporal split: encounters admitted on or after `test_cutoff` form the
/// test set. Of the rest, the `round(val_fraction * n)` encounters with the
/// smallest `keyed_hash(seed, encounter_id)` form the validation set.
pub fn temporal_split(
    d: &CohortDataset,
    test_cutoff: NaiveDate,
    val_fraction: f64,
    seed: u64,
) -> Result<Splits, DataError> {
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(DataError::Split(format!(
            "val_fraction must lie in (0, 1), got {val_fraction}"
        )));
    }
    let (test, rest): (Vec<&Encounter>, Vec<&Encounter>) =
        d.encounters.iter().partition(|e| e.admit_date >= test_cutoff);
    if test.is_empty() {
        return Err(DataError::Split(format!(
            "no encounters admitted on or after {test_cutoff}; choose an earlier cutoff"
        )));
    }
    let n_val = (rest.len() as f64 * val_fraction).round() as usize;
    let mut ranked: Vec<(u64, usize)> = rest
        .iter()
        .enumerate()
        .map(|(i, e)| (keyed_hash(seed, &e.encounter_id), i))
        .collect();
    ranked.sort_unstable();
    let val_idx: HashSet<usize> = ranked.iter().take(n_val).map(|&(_, i)| i).collect();
    if rest.len() - val_idx.len() == 0 {
        return Err(DataError::Split(format!(
            "no training encounters before {test_cutoff}; choose a later cutoff"
        )));
    }
    let pick = |keep_val: bool| -> Vec<Encounter> {
        rest.iter()
            .enumerate()
            .filter(|(i, _)| val_idx.contains(i) == keep_val)
            .map(|(_, e)| (*e).clone())
            .collect()
    };
    let sub = |encounters: Vec<Encounter>, name: &str| CohortDataset {
        encounters,
        provenance: format!("{}#{name}", d.provenance),
    };
    Ok(Splits {
        train: sub(pick(false), "train"),
        val: sub(pick(true), "val"),
        test: sub(test.into_iter().cloned().collect(), "test"),
    })
}
