//! Pipeline configuration file.
//!
//! A JSON object; relative paths resolve against the directory holding the
//! file. Environment variables may override the paths and the port only:
//! `IVOS_GENERATOR`, `IVOS_COHORT`, `IVOS_CHECKPOINT_DIR`, `IVOS_REPORT_DIR`
//! and `IVOS_PORT`.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use chrono::NaiveDate;
use ivos_baselines::GbdtGrid;
use ivos_convcnp::ModelConfig;
use ivos_core::{CriteriaSet, GeneratorConfig, TaskConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    /// Generator settings for `synth`; built-in defaults when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<PathBuf>,
    pub cohort: PathBuf,
    pub checkpoint_dir: PathBuf,
    pub report_dir: PathBuf,
}

/// A named criteria table or an inline one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CriteriaChoice {
    Named(String),
    Inline(CriteriaSet),
}

impl CriteriaChoice {
    pub fn named(name: &str) -> Self {
        CriteriaChoice::Named(name.to_string())
    }

    pub fn resolve(&self) -> Result<CriteriaSet> {
        match self {
            CriteriaChoice::Named(n) => match CriteriaSet::by_name(n) {
                Some(c) => Ok(c),
                None => bail!("unknown criteria set {n:?} (expected \"strict\" or \"loose\")"),
            },
            CriteriaChoice::Inline(c) => {
                c.validate()?;
                Ok(*c)
            }
        }
    }

    /// Used for checkpoint directories and report titles.
    pub fn label(&self) -> &str {
        match self {
            CriteriaChoice::Named(n) => n,
            CriteriaChoice::Inline(_) => "inline",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    /// Encounters admitted on or after this date form the test set.
    pub test_cutoff: NaiveDate,
    #[serde(default = "default_val_fraction")]
    pub val_fraction: f64,
}

fn default_val_fraction() -> f64 {
    0.10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub paths: Paths,
    #[serde(default)]
    pub task: TaskConfig,
    /// One of `full`, `desk`, `tiny`.
    pub model_preset: String,
    /// Search channels and learning rate instead of training the preset once.
    #[serde(default)]
    pub grid_search: bool,
    pub criteria: CriteriaChoice,
    /// Criteria for the sensitivity rerun in `evaluate`.
    #[serde(default = "default_rerun")]
    pub rerun_criteria: Option<CriteriaChoice>,
    pub seed: u64,
    pub split: SplitConfig,
    #[serde(default = "default_iterations")]
    pub bootstrap_iterations: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_top_k")]
    pub top_k: usize,
    /// Days with fewer active tasks are excluded from precision@k.
    #[serde(default = "default_min_active")]
    pub min_active_per_day: usize,
    #[serde(default = "default_bins")]
    pub calibration_bins: usize,
    #[serde(default)]
    pub gbdt_grid: GbdtGrid,
    /// Cap on forecasting-GBDT training rows (seeded subsample).
    #[serde(default = "default_max_rows")]
    pub forecast_max_rows: usize,
    #[serde(default = "default_port")]
    pub port: u16,
}

fn default_rerun() -> Option<CriteriaChoice> {
    Some(CriteriaChoice::named("loose"))
}
fn default_iterations() -> usize {
    1000
}
fn default_alpha() -> f64 {
    0.05
}
fn default_top_k() -> usize {
    5
}
fn default_min_active() -> usize {
    10
}
fn default_bins() -> usize {
    10
}
fn default_max_rows() -> usize {
    20_000
}
fn default_port() -> u16 {
    8080
}

impl PipelineConfig {
    /// Reads, resolves relative paths, applies environment overrides and
    /// validates.
    pub fn load(path: &Path) -> Result<PipelineConfig> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg = Self::from_json(&text).with_context(|| format!("malformed config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_relative(base);
        cfg.apply_env(|k| std::env::var(k).ok())?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses without touching the environment; errors name the offending
    /// field path.
    pub fn from_json(text: &str) -> Result<PipelineConfig> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| anyhow::anyhow!("field `{}`: {}", e.path(), e.inner()))
    }

    pub fn resolve_relative(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(g) = self.paths.generator.as_mut() {
            fix(g);
        }
        fix(&mut self.paths.cohort);
        fix(&mut self.paths.checkpoint_dir);
        fix(&mut self.paths.report_dir);
    }

    pub fn apply_env(&mut self, lookup: impl Fn(&str) -> Option<String>) -> Result<()> {
        if let Some(v) = lookup("IVOS_GENERATOR") {
            self.paths.generator = Some(v.into());
        }
        if let Some(v) = lookup("IVOS_COHORT") {
            self.paths.cohort = v.into();
        }
        if let Some(v) = lookup("IVOS_CHECKPOINT_DIR") {
            self.paths.checkpoint_dir = v.into();
        }
        if let Some(v) = lookup("IVOS_REPORT_DIR") {
            self.paths.report_dir = v.into();
        }
        if let Some(v) = lookup("IVOS_PORT") {
            self.port = v.parse().with_context(|| format!("IVOS_PORT={v:?} is not a port number"))?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let model = self.model_config()?;
        self.task.validate()?;
        if model.lookback_hours != self.task.lookback_hours || model.forecast_hours != self.task.forecast_hours {
            bail!(
                "model preset {:?} uses a {} h lookback and {} h forecast window but the task config uses {} h and {} h",
                self.model_preset,
                model.lookback_hours,
                model.forecast_hours,
                self.task.lookback_hours,
                self.task.forecast_hours
            );
        }
        self.criteria.resolve().context("field `criteria`")?;
        if let Some(r) = &self.rerun_criteria {
            r.resolve().context("field `rerun_criteria`")?;
        }
        if !(self.split.val_fraction > 0.0 && self.split.val_fraction < 1.0) {
            bail!("field `split.val_fraction` must lie in (0, 1)");
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            bail!("field `alpha` must lie in (0, 1)");
        }
        if self.bootstrap_iterations == 0 || self.top_k == 0 || self.calibration_bins == 0 {
            bail!("bootstrap_iterations, top_k and calibration_bins must be positive");
        }
        if self.forecast_max_rows == 0 {
            bail!("field `forecast_max_rows` must be positive");
        }
        Ok(())
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        match ModelConfig::preset(&self.model_preset) {
            Some(m) => Ok(m),
            None => bail!(
                "field `model_preset`: unknown preset {:?} (expected full, desk or tiny)",
                self.model_preset
            ),
        }
    }

    pub fn generator_config(&self) -> Result<GeneratorConfig> {
        let Some(path) = &self.paths.generator else {
            return Ok(GeneratorConfig::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let de = &mut serde_json::Deserializer::from_str(&text);
        let cfg: GeneratorConfig = serde_path_to_error::deserialize(de)
            .map_err(|e| anyhow::anyhow!("{}: field `{}`: {}", path.display(), e.path(), e.inner()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checkpoint layout: the forecaster and forecasting GBDT are shared, the
    /// classifiers live under one directory per criteria label.
    pub fn np_dir(&self) -> PathBuf {
        self.paths.checkpoint_dir.join("np")
    }

    pub fn forecast_gbdt_path(&self) -> PathBuf {
        self.paths.checkpoint_dir.join("gbdt_forecast.json")
    }

    pub fn criteria_dir(&self, criteria: &CriteriaChoice) -> PathBuf {
        self.paths.checkpoint_dir.join(format!("criteria_{}", criteria.label()))
    }

    pub fn report_json(&self) -> PathBuf {
        self.paths.report_dir.join("report.json")
    }

    pub fn report_table(&self) -> PathBuf {
        self.paths.report_dir.join("report.txt")
    }
}
