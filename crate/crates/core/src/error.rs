//! Crate-wide error type.

use chrono::NaiveDate;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("model identifier must be non-empty")]
    EmptyModelId,

    #[error("quantile level {level} outside the open interval (0, 1)")]
    LevelOutOfRange { level: f64 },

    #[error("quantile levels must be strictly increasing (level {level} repeated or out of order)")]
    LevelsNotIncreasing { level: f64 },

    #[error("forecast for {context} has a non-finite value")]
    NonFiniteValue { context: String },

    #[error("quantile values must be non-decreasing with level in {context}")]
    NonMonotoneValues { context: String },

    #[error("forecast for {context} has no quantiles")]
    EmptyForecast { context: String },

    #[error("region {region:?} not in the configured region set")]
    UnknownRegion { region: String },

    #[error("value type {value_type:?} not in the configured value-type set")]
    UnknownValueType { value_type: String },

    #[error("delivery {model}@{delivery_date}: duplicate forecast for {region}/{value_type} {target_date}")]
    DuplicateForecast {
        model: String,
        delivery_date: NaiveDate,
        region: String,
        value_type: String,
        target_date: NaiveDate,
    },

    #[error("delivery {model}@{delivery_date}: target dates for {region}/{value_type} are not contiguous")]
    NonContiguousHorizon {
        model: String,
        delivery_date: NaiveDate,
        region: String,
        value_type: String,
    },

    #[error("CSV header mismatch: expected {expected:?}, found {found:?}")]
    CsvHeader { expected: String, found: String },

    #[error("CSV line {line}: {message}")]
    CsvRow { line: u64, message: String },

    #[error("CSV line {line}: duplicate row for {context} with differing values ({first} vs {second})")]
    ConflictingDuplicateRow {
        line: u64,
        context: String,
        first: f64,
        second: f64,
    },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("sample set must be non-empty and finite")]
    InvalidSampleSet,

    #[error("standard deviation must be strictly positive (got {sigma})")]
    NonPositiveSigma { sigma: f64 },

    #[error("scale parameter must be strictly positive and finite (got {scale})")]
    InvalidScale { scale: f64 },

    #[error("skew-normal fit needs at least 3 distinct quantile levels (got {got}); use the piecewise-linear fallback")]
    TooFewLevelsForFit { got: usize },

    #[error("forecast is missing level {level} and it could not be completed")]
    MissingLevel { level: f64 },

    #[error("invalid PSO configuration: {message}")]
    PsoConfig { message: String },

    #[error("objective returned a non-finite value at the initial sample after {retries} redraws")]
    PsoNonFiniteObjective { retries: usize },

    #[error("model list must be non-empty")]
    EmptyModelList,

    #[error("weights must be non-negative and sum to 1 (got sum {sum})")]
    InvalidWeights { sum: f64 },

    #[error("reciprocal transform needs non-negative scores (got {score})")]
    NegativeScoreForReciprocal { score: f64 },

    #[error("no training data: every model window is empty")]
    AllWindowsEmpty,

    #[error("lead {lead} outside [1, {horizon}]")]
    LeadOutOfRange { lead: usize, horizon: usize },

    #[error("no forecast for positively weighted model {model} on {date}")]
    MissingComponentForecast { model: String, date: NaiveDate },

    #[error("need at least {needed} complete training days, got {got}; consider the `stacked-equal` fallback")]
    InsufficientTrainingDays { needed: usize, got: usize },

    #[error("no model has a complete training window; consider the `stacked-equal` fallback")]
    NoCompleteWindows,

    #[error("no matched forecast/observation dates")]
    NoMatchedDates,

    #[error("methods cover different target dates: {message}")]
    DateMisalignment { message: String },

    #[error("unknown combination method {name:?}")]
    UnknownMethod { name: String },

    #[error("invalid synthetic-ensemble configuration: {message}")]
    InvalidSynthConfig { message: String },
}
