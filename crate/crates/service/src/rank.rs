//! Daily ranked lists for review.

use chrono::NaiveDate;
use ivos_core::{PerVital, ReadinessResult, Task};
use ivos_metrics::rank_day;
use serde::{Deserialize, Serialize};

use crate::scoring::ModelKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankEntry {
    pub encounter_id: String,
    pub day: NaiveDate,
    pub probability: f64,
    pub model: ModelKind,
    /// Per-interval in-range probabilities; forecaster only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub factors: Option<Vec<PerVital<Option<f64>>>>,
    /// Retrospective label, when the forecast window was observed.
    pub label: Option<bool>,
}

/// Entries for the tasks of one day, sorted by probability descending with
/// the evaluation tie-break (encounter id ascending).
pub fn rank_entries(
    tasks: &[&Task],
    probabilities: &[f64],
    readiness: Option<&[&ReadinessResult]>,
    model: ModelKind,
) -> Vec<RankEntry> {
    let mut out: Vec<RankEntry> = tasks
        .iter()
        .enumerate()
        .map(|(i, t)| RankEntry {
            encounter_id: t.encounter_id.clone(),
            day: t.day_key,
            probability: probabilities[i],
            model,
            factors: readiness.map(|r| r[i].factors.clone()),
            label: t.label,
        })
        .collect();
    rank_day(&mut out, |e| e.probability, |e| &e.encounter_id);
    out
}

/// Fixed-width text listing used by the `rank` command.
pub fn format_ranking(entries: &[RankEntry]) -> String {
    let mut out = format!("{:>4}  {:<16}  {:>11}  {}\n", "rank", "encounter", "probability", "label");
    for (i, e) in entries.iter().enumerate() {
        let label = match e.label {
            Some(true) => "ready",
            Some(false) => "not ready",
            None => "-",
        };
        out.push_str(&format!(
            "{:>4}  {:<16}  {:>11.4}  {}\n",
            i + 1,
            e.encounter_id,
            e.probability,
            label
        ));
    }
    out
}
