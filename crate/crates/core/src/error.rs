use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("line {line}: field `{field}`: {message}")]
    Malformed {
        line: usize,
        field: String,
        message: String,
    },
    #[error("line {line}: duplicate encounter_id {id:?}")]
    DuplicateId { line: usize, id: String },
    #[error("temporal split: {0}")]
    Split(String),
    #[error("cohort is empty")]
    EmptyCohort,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error, PartialEq)]
pub enum ReadinessError {
    #[error("sigma must be positive, got {0}")]
    NonPositiveSigma(f64),
    #[error("criteria for {kind}: lower bound {lo} is not below upper bound {hi}")]
    InvertedInterval { kind: String, lo: f64, hi: f64 },
    #[error("time {t} is outside the predictive grid [{start}, {end}]")]
    OutOfSpan { t: f64, start: f64, end: f64 },
}
