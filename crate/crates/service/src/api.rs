//! HTTP API over an immutable snapshot of tasks, forecasts and scores.
//!
//! Every response is a pure function of the snapshot and the request; the
//! what-if endpoint recomputes readiness from the stored forecast and never
//! mutates state.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use anyhow::Result;
use axum::body::Bytes;
use axum::extract::rejection::QueryRejection;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::NaiveDate;
use ivos_convcnp::TrainedModel;
use ivos_core::{
    apply_overrides, switch_prob, CriteriaOverride, CriteriaSet, Measurement, PerVital, PredictiveDistribution,
    ReadinessError, ReadinessResult, Task, TaskConfig, VariableOverride, VitalKind,
};
use serde::{Deserialize, Serialize};

use crate::pipeline::CriteriaModels;
use crate::rank::{rank_entries, RankEntry};
use crate::scoring::{infer, ModelKind, ModelScores};

/// Tasks of the served days with every model's scores, computed once.
#[derive(Debug, Clone)]
pub struct Snapshot {
    criteria: CriteriaSet,
    task_cfg: TaskConfig,
    tasks: Vec<Task>,
    dists: Vec<PredictiveDistribution>,
    scores: ModelScores,
    days: BTreeMap<NaiveDate, Vec<usize>>,
}

impl Snapshot {
    pub fn build(tasks: Vec<Task>, base: &TrainedModel, models: &CriteriaModels, task_cfg: TaskConfig) -> Result<Self> {
        let inf = infer(base, &tasks)?;
        let scores = ModelScores::compute(
            &tasks,
            &inf,
            &models.criteria,
            &models.head,
            &models.classifiers,
            &task_cfg,
        )?;
        let mut days: BTreeMap<NaiveDate, Vec<usize>> = BTreeMap::new();
        for (i, t) in tasks.iter().enumerate() {
            days.entry(t.day_key).or_default().push(i);
        }
        Ok(Snapshot {
            criteria: models.criteria,
            task_cfg,
            tasks,
            dists: inf.dists,
            scores,
            days,
        })
    }

    pub fn days(&self) -> Vec<DayInfo> {
        self.days
            .iter()
            .map(|(&day, idx)| DayInfo {
                day,
                active_tasks: idx.len(),
            })
            .collect()
    }

    /// Ranked entries of one day, or `None` for an unknown day.
    pub fn ranking(&self, day: NaiveDate, model: ModelKind) -> Option<Vec<RankEntry>> {
        let idx = self.days.get(&day)?;
        let tasks: Vec<&Task> = idx.iter().map(|&i| &self.tasks[i]).collect();
        let all = self.scores.probabilities(model);
        let probs: Vec<f64> = idx.iter().map(|&i| all[i]).collect();
        let readiness: Vec<&ReadinessResult> = idx.iter().map(|&i| &self.scores.readiness[i]).collect();
        let factors = (model == ModelKind::Np).then_some(readiness.as_slice());
        Some(rank_entries(&tasks, &probs, factors, model))
    }

    fn find(&self, encounter_id: &str, day: NaiveDate) -> Result<usize, ApiError> {
        let idx = self
            .days
            .get(&day)
            .ok_or_else(|| ApiError::not_found("unknown_day", format!("no active tasks on {day}")))?;
        idx.iter()
            .copied()
            .find(|&i| self.tasks[i].encounter_id == encounter_id)
            .ok_or_else(|| {
                ApiError::not_found(
                    "unknown_encounter",
                    format!("encounter {encounter_id:?} has no active task on {day}"),
                )
            })
    }

    pub fn encounter(&self, encounter_id: &str, day: NaiveDate) -> Result<EncounterView, ApiError> {
        let i = self.find(encounter_id, day)?;
        let t = &self.tasks[i];
        let d = &self.dists[i];
        let g = d.grid_len();
        let row = |v: &[f64], k: VitalKind| v[k.index() * g..(k.index() + 1) * g].to_vec();
        Ok(EncounterView {
            encounter_id: t.encounter_id.clone(),
            day: t.day_key,
            tau: t.tau_hours,
            label: t.label,
            context: t.context.clone(),
            targets: t.targets.clone(),
            criteria: self.criteria,
            forecast: ForecastCurve {
                times: d.grid_times.clone(),
                mu: PerVital::from_fn(|k| row(&d.mu, k)),
                sigma: PerVital::from_fn(|k| row(&d.sigma, k)),
            },
            readiness: self.scores.readiness[i].clone(),
        })
    }

    pub fn what_if(&self, req: &WhatIfRequest) -> Result<ReadinessResult, ApiError> {
        let i = self.find(&req.encounter_id, req.day)?;
        let criteria = apply_overrides(&self.criteria, &req.overrides).map_err(|e| match &e {
            ReadinessError::InvertedInterval { kind, .. } => {
                ApiError::bad_request("invalid_override", e.to_string(), format!("overrides.{kind}.interval"))
            }
            _ => ApiError::bad_request("invalid_override", e.to_string(), "overrides".to_string()),
        })?;
        switch_prob(&self.dists[i], &criteria, &self.task_cfg)
            .map_err(|e| ApiError::bad_request("invalid_override", e.to_string(), "overrides".to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayInfo {
    pub day: NaiveDate,
    pub active_tasks: usize,
}

/// Predictive mean and standard deviation on the 0.5 h window grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastCurve {
    pub times: Vec<f64>,
    pub mu: PerVital<Vec<f64>>,
    pub sigma: PerVital<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncounterView {
    pub encounter_id: String,
    pub day: NaiveDate,
    pub tau: f64,
    pub label: Option<bool>,
    pub context: Vec<Measurement>,
    pub targets: Vec<Measurement>,
    pub criteria: CriteriaSet,
    pub forecast: ForecastCurve,
    pub readiness: ReadinessResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WhatIfRequest {
    pub encounter_id: String,
    pub day: NaiveDate,
    #[serde(default)]
    pub overrides: CriteriaOverride,
}

/// Error body `{code, message}`, plus the offending field for 400s.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: u16,
    pub code: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
}

impl ApiError {
    fn not_found(code: &str, message: String) -> Self {
        ApiError {
            status: 404,
            code: code.to_string(),
            message,
            field: None,
        }
    }

    fn bad_request(code: &str, message: String, field: String) -> Self {
        ApiError {
            status: 400,
            code: code.to_string(),
            message,
            field: Some(field),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self)).into_response()
    }
}

type Params = Result<Query<HashMap<String, String>>, QueryRejection>;

fn param<'a>(q: &'a Params, name: &str) -> Result<Option<&'a str>, ApiError> {
    match q {
        Ok(Query(m)) => Ok(m.get(name).map(String::as_str)),
        Err(e) => Err(ApiError::bad_request("invalid_query", e.body_text(), name.to_string())),
    }
}

fn day_param(q: &Params) -> Result<NaiveDate, ApiError> {
    let raw = param(q, "day")?
        .ok_or_else(|| ApiError::bad_request("missing_parameter", "query parameter `day` is required".into(), "day".into()))?;
    raw.parse().map_err(|_| {
        ApiError::bad_request(
            "invalid_parameter",
            format!("`day` must be a date like 2023-07-01, got {raw:?}"),
            "day".into(),
        )
    })
}

async fn days(State(s): State<Arc<Snapshot>>) -> Json<Vec<DayInfo>> {
    Json(s.days())
}

async fn rank(State(s): State<Arc<Snapshot>>, q: Params) -> Result<Json<Vec<RankEntry>>, ApiError> {
    let day = day_param(&q)?;
    let model = match param(&q, "model")? {
        None => ModelKind::Np,
        Some(m) => m
            .parse()
            .map_err(|e: anyhow::Error| ApiError::bad_request("unknown_model", e.to_string(), "model".into()))?,
    };
    s.ranking(day, model)
        .map(Json)
        .ok_or_else(|| ApiError::not_found("unknown_day", format!("no active tasks on {day}")))
}

async fn encounter(
    State(s): State<Arc<Snapshot>>,
    Path(id): Path<String>,
    q: Params,
) -> Result<Json<EncounterView>, ApiError> {
    let day = day_param(&q)?;
    s.encounter(&id, day).map(Json)
}

/// Wire form of [`WhatIfRequest`] with string keys, so a bad entry's error
/// path names the vital rather than an opaque map key.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct WhatIfBody {
    encounter_id: String,
    day: NaiveDate,
    #[serde(default)]
    overrides: BTreeMap<String, VariableOverride>,
}

fn parse_what_if(body: &[u8]) -> Result<WhatIfRequest, ApiError> {
    let de = &mut serde_json::Deserializer::from_slice(body);
    let raw: WhatIfBody = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let field = if path == "." { "body".to_string() } else { path };
        ApiError::bad_request("invalid_body", e.inner().to_string(), field)
    })?;
    let mut overrides = BTreeMap::new();
    for (code, edit) in raw.overrides {
        let kind = VitalKind::from_code(&code).ok_or_else(|| {
            ApiError::bad_request(
                "invalid_body",
                format!("unknown vital {code:?}; expected one of hr, rr, spo2, sbp, temp"),
                format!("overrides.{code}"),
            )
        })?;
        overrides.insert(kind, edit);
    }
    Ok(WhatIfRequest {
        encounter_id: raw.encounter_id,
        day: raw.day,
        overrides: CriteriaOverride(overrides),
    })
}

async fn what_if(State(s): State<Arc<Snapshot>>, body: Bytes) -> Result<Json<ReadinessResult>, ApiError> {
    s.what_if(&parse_what_if(&body)?).map(Json)
}

async fn not_found() -> ApiError {
    ApiError::not_found("not_found", "no such endpoint".into())
}

pub fn router(snapshot: Arc<Snapshot>) -> Router {
    Router::new()
        .route("/api/days", get(days))
        .route("/api/rank", get(rank))
        .route("/api/encounter/{id}", get(encounter))
        .route("/api/whatif", post(what_if))
        .fallback(not_found)
        .with_state(snapshot)
}
