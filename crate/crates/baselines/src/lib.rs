//! Comparison models: last-value repeat, summary features with logistic
//! regression, and gradient-boosted trees for classification and for
//! forecasting at arbitrary horizons.

pub mod features;
pub mod forecast;
pub mod gbdt;
pub mod logistic;
pub mod repeat;

use thiserror::Error;

pub use features::{extract_features, feature_names, features_from, FEATURE_COUNT};
pub use forecast::{gbdt_forecast_rows, ForecastRows, FORECAST_ROW_LEN};
pub use gbdt::{
    fit_gbdt, fit_gbdt_with, train_gbdt_classifier, train_gbdt_regressor, Dataset, GbdtGrid, GbdtModel, GbdtParams,
    Loss, TreeNode,
};
pub use logistic::{fit_logistic, train_logistic, LogisticModel, C_GRID};
pub use repeat::{repeat_classify, repeat_forecast};

#[derive(Debug, Error, PartialEq)]
pub enum BaselineError {
    #[error("labels contain a single class")]
    SingleClass,
    #[error("shape: {0}")]
    Shape(String),
    #[error("invalid configuration: {0}")]
    Config(String),
}
