//! Evaluation report: deterministic JSON and an aligned text table.

use std::collections::BTreeMap;
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::bootstrap::Comparison;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricValue {
    pub value: f64,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
}

impl MetricValue {
    pub fn point(value: f64) -> Self {
        MetricValue {
            value,
            ci_low: None,
            ci_high: None,
        }
    }

    pub fn with_ci(value: f64, lo: f64, hi: f64) -> Self {
        MetricValue {
            value,
            ci_low: Some(lo),
            ci_high: Some(hi),
        }
    }
}

/// One table: rows are models, columns are metrics.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Section {
    pub title: String,
    /// Row order.
    pub models: Vec<String>,
    /// Column order.
    pub metrics: Vec<String>,
    /// metric -> model -> value.
    pub values: BTreeMap<String, BTreeMap<String, MetricValue>>,
    /// metric -> models flagged best.
    pub best: BTreeMap<String, Vec<String>>,
    /// metric -> adjusted significance level used for the flags.
    pub alpha_adjusted: BTreeMap<String, f64>,
    /// metric -> hex digest of the shared bootstrap indices.
    pub index_digests: BTreeMap<String, String>,
}

impl Section {
    pub fn new(title: impl Into<String>) -> Self {
        Section {
            title: title.into(),
            ..Default::default()
        }
    }

    fn touch(&mut self, model: &str, metric: &str) {
        if !self.models.iter().any(|m| m == model) {
            self.models.push(model.to_string());
        }
        if !self.metrics.iter().any(|m| m == metric) {
            self.metrics.push(metric.to_string());
        }
    }

    pub fn set(&mut self, model: &str, metric: &str, value: MetricValue) {
        self.touch(model, metric);
        self.values
            .entry(metric.to_string())
            .or_default()
            .insert(model.to_string(), value);
    }

    pub fn get(&self, model: &str, metric: &str) -> Option<MetricValue> {
        self.values.get(metric)?.get(model).copied()
    }

    /// Records every model's value, CI and the best-set flags of a comparison.
    pub fn add_comparison(&mut self, metric: &str, cmp: &Comparison) {
        for (m, name) in cmp.models.iter().enumerate() {
            let (lo, hi) = cmp.ci[m];
            self.set(name, metric, MetricValue::with_ci(cmp.point[m], lo, hi));
        }
        self.best
            .insert(metric.to_string(), cmp.best_set().into_iter().map(String::from).collect());
        self.alpha_adjusted.insert(metric.to_string(), cmp.alpha_adjusted);
        self.index_digests
            .insert(metric.to_string(), format!("{:016x}", cmp.index_digest));
    }

    pub fn is_best(&self, model: &str, metric: &str) -> bool {
        self.best
            .get(metric)
            .is_some_and(|v| v.iter().any(|m| m == model))
    }

    fn cell(&self, model: &str, metric: &str) -> String {
        let Some(v) = self.get(model, metric) else {
            return "-".to_string();
        };
        let mark = if self.is_best(model, metric) { "*" } else { "" };
        match (v.ci_low, v.ci_high) {
            (Some(lo), Some(hi)) => format!("{}{mark} [{}, {}]", fmt_num(v.value), fmt_num(lo), fmt_num(hi)),
            _ => format!("{}{mark}", fmt_num(v.value)),
        }
    }

    pub fn to_table(&self) -> String {
        let mut header = vec!["model".to_string()];
        header.extend(self.metrics.iter().cloned());
        let mut rows = vec![header];
        for model in &self.models {
            let mut row = vec![model.clone()];
            row.extend(self.metrics.iter().map(|metric| self.cell(model, metric)));
            rows.push(row);
        }
        let widths: Vec<usize> = (0..rows[0].len())
            .map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = format!("{}\n", self.title);
        for (i, row) in rows.iter().enumerate() {
            let line: Vec<String> = row
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(c, (s, &w))| if c == 0 { format!("{s:<w$}") } else { format!("{s:>w$}") })
                .collect();
            let _ = writeln!(out, "{}", line.join("  ").trim_end());
            if i == 0 {
                let total = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
                let _ = writeln!(out, "{}", "-".repeat(total));
            }
        }
        out
    }
}

fn fmt_num(x: f64) -> String {
    if x.abs() >= 100.0 {
        format!("{x:.1}")
    } else {
        format!("{x:.3}")
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub seed: u64,
    pub bootstrap_iterations: usize,
    pub alpha: f64,
    pub n_models: usize,
    /// `alpha / (n_models - 1)`.
    pub alpha_adjusted: f64,
    pub extra: BTreeMap<String, serde_json::Value>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metadata: ReportMetadata,
    /// Sections in insertion order.
    pub sections: Vec<Section>,
    /// Free-form diagnostics such as calibration curves.
    pub diagnostics: BTreeMap<String, serde_json::Value>,
}

impl EvalReport {
    pub fn section(&self, title: &str) -> Option<&Section> {
        self.sections.iter().find(|s| s.title == title)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report values serialize")
    }

    pub fn to_table(&self) -> String {
        let m = &self.metadata;
        let mut out = format!(
            "seed {}  bootstrap {}  alpha {}  adjusted alpha {:.5} (k = {})\n* best or not significantly different from best\n\n",
            m.seed, m.bootstrap_iterations, m.alpha, m.alpha_adjusted, m.n_models
        );
        for s in &self.sections {
            out.push_str(&s.to_table());
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_aligns_and_marks_best() {
        let mut s = Section::new("Ranking");
        s.set("np", "AUROC", MetricValue::with_ci(0.81, 0.8, 0.82));
        s.set("repeat", "AUROC", MetricValue::with_ci(0.7, 0.69, 0.71));
        s.best.insert("AUROC".into(), vec!["np".into()]);
        let t = s.to_table();
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines[0], "Ranking");
        assert!(lines[3].contains("0.810* [0.800, 0.820]"));
        assert!(!lines[4].contains('*'));
        assert_eq!(lines[3].len(), lines[4].len());
    }
}
