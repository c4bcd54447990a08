//! Pipeline driver for the switch-readiness models: configuration,
//! training stages, test-set evaluation, daily ranked lists and the review
//! HTTP API.

pub mod api;
pub mod config;
pub mod evaluate;
pub mod pipeline;
pub mod rank;
pub mod scoring;

pub use api::{router, ApiError, DayInfo, EncounterView, ForecastCurve, Snapshot, WhatIfRequest};
pub use config::{CriteriaChoice, Paths, PipelineConfig, SplitConfig};
pub use evaluate::{binary_title, evaluate, mae_column, ranking_title, write_report, EvalInputs, FORECAST_SECTION};
pub use pipeline::{Classifiers, CriteriaModels, TaskSets};
pub use rank::{format_ranking, rank_entries, RankEntry};
pub use scoring::{infer, ModelKind, ModelScores, NpInference};
