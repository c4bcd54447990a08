//! Cohort data model, synthetic cohort generation, prediction-task
//! construction, labelling and switch-readiness probabilities.

pub mod criteria;
pub mod data;
pub mod error;
pub mod hashing;
pub mod readiness;
pub mod synth;
pub mod taskgen;
pub mod vital;

pub use criteria::{apply_overrides, CriteriaOverride, CriteriaSet, Interval, VariableOverride};
pub use data::{
    clean_measurements, parse_cohort, temporal_split, truncate_encounter, write_cohort, CohortDataset, Encounter,
    Measurement, PlausibleRanges, PrescriptionOrder, Route, Splits, MAX_ENCOUNTER_HOURS,
};
pub use error::{DataError, ReadinessError};
pub use readiness::{gaussian_cdf, gaussian_quantile, in_range_prob, switch_prob, PredictiveDistribution, ReadinessResult};
pub use synth::{describe_cohort, generate_cohort, CohortSummary, GeneratorConfig};
pub use taskgen::{
    aggregate_window, build_classification_tasks, build_forecast_tasks, iv_active, label_task, make_task, Task,
    TaskConfig,
};
pub use vital::{PerVital, VitalKind};
