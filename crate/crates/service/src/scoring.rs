//! Switch-readiness scores of every model for a list of tasks.

use std::fmt;
use std::str::FromStr;

use anyhow::{bail, Result};
use ivos_baselines::repeat_classify;
use ivos_convcnp::{ClassificationHead, TrainedModel};
use ivos_core::{switch_prob, CriteriaSet, PredictiveDistribution, ReadinessResult, Task, TaskConfig};
use ivos_metrics::ScoredInstance;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::pipeline::{feature_rows, Classifiers};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "np")]
    Np,
    #[serde(rename = "np-tuned")]
    NpTuned,
    #[serde(rename = "logistic")]
    Logistic,
    #[serde(rename = "gbdt")]
    Gbdt,
    #[serde(rename = "repeat")]
    Repeat,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [
        ModelKind::Np,
        ModelKind::NpTuned,
        ModelKind::Logistic,
        ModelKind::Gbdt,
        ModelKind::Repeat,
    ];

    /// Ranking-table models, in report order.
    pub const RANKERS: [ModelKind; 4] = [ModelKind::Logistic, ModelKind::Gbdt, ModelKind::Np, ModelKind::NpTuned];

    pub fn code(self) -> &'static str {
        match self {
            ModelKind::Np => "np",
            ModelKind::NpTuned => "np-tuned",
            ModelKind::Logistic => "logistic",
            ModelKind::Gbdt => "gbdt",
            ModelKind::Repeat => "repeat",
        }
    }

    /// Display name used in report tables.
    pub fn title(self) -> &'static str {
        match self {
            ModelKind::Np => "NP",
            ModelKind::NpTuned => "NP-tuned",
            ModelKind::Logistic => "Logistic",
            ModelKind::Gbdt => "GBDT",
            ModelKind::Repeat => "Repeat",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for ModelKind {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        match ModelKind::ALL.into_iter().find(|m| m.code() == s) {
            Some(m) => Ok(m),
            None => bail!("unknown model {s:?} (expected one of np, np-tuned, logistic, gbdt, repeat)"),
        }
    }
}

/// Forecaster outputs per task: the predictive marginals and the pooled
/// features used by the tuned head.
#[derive(Debug, Clone)]
pub struct NpInference {
    pub dists: Vec<PredictiveDistribution>,
    pub embeddings: Vec<Vec<f64>>,
}

pub fn infer(base: &TrainedModel, tasks: &[Task]) -> Result<NpInference> {
    let out: Vec<(PredictiveDistribution, Vec<f64>)> = tasks
        .par_iter()
        .map(|t| base.predict_with_embedding(&t.context, t.tau_hours))
        .collect::<Result<_, _>>()?;
    let (dists, embeddings) = out.into_iter().unzip();
    Ok(NpInference { dists, embeddings })
}

pub fn readiness(inf: &NpInference, criteria: &CriteriaSet, task: &TaskConfig) -> Result<Vec<ReadinessResult>> {
    Ok(inf
        .dists
        .iter()
        .map(|d| switch_prob(d, criteria, task))
        .collect::<Result<_, _>>()?)
}

/// Scores of all five models for one criteria set, aligned with the tasks.
#[derive(Debug, Clone)]
pub struct ModelScores {
    pub readiness: Vec<ReadinessResult>,
    pub np_tuned: Vec<f64>,
    pub logistic: Vec<f64>,
    pub gbdt: Vec<f64>,
    pub repeat: Vec<f64>,
}

impl ModelScores {
    pub fn compute(
        tasks: &[Task],
        inf: &NpInference,
        criteria: &CriteriaSet,
        head: &ClassificationHead,
        classifiers: &Classifiers,
        task_cfg: &TaskConfig,
    ) -> Result<ModelScores> {
        let rows = feature_rows(tasks, task_cfg.lookback_hours);
        let emb: Vec<&[f64]> = inf.embeddings.iter().map(Vec::as_slice).collect();
        Ok(ModelScores {
            readiness: readiness(inf, criteria, task_cfg)?,
            np_tuned: if emb.is_empty() { Vec::new() } else { head.predict_embeddings(&emb)? },
            logistic: rows.iter().map(|r| classifiers.logistic.predict_proba(r)).collect(),
            gbdt: rows.iter().map(|r| classifiers.gbdt.predict(r)).collect(),
            repeat: tasks.iter().map(|t| repeat_classify(t, criteria)).collect(),
        })
    }

    pub fn probabilities(&self, model: ModelKind) -> Vec<f64> {
        match model {
            ModelKind::Np => self.readiness.iter().map(|r| r.probability).collect(),
            ModelKind::NpTuned => self.np_tuned.clone(),
            ModelKind::Logistic => self.logistic.clone(),
            ModelKind::Gbdt => self.gbdt.clone(),
            ModelKind::Repeat => self.repeat.clone(),
        }
    }

    pub fn instances(&self, model: ModelKind, tasks: &[Task]) -> Vec<ScoredInstance> {
        tasks
            .iter()
            .zip(self.probabilities(model))
            .map(|(t, p)| ScoredInstance::new(t.encounter_id.clone(), t.day_key, p, t.label == Some(true)))
            .collect()
    }
}
