use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, PgadError>;

#[derive(Debug, Error)]
pub enum PgadError {
    #[error("invalid configuration: `{field}` {reason}")]
    Config { field: String, reason: String },

    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    Shape {
        context: String,
        expected: usize,
        actual: usize,
    },

    #[error("{name} = {value} is outside {range}")]
    Range {
        name: String,
        value: f64,
        range: String,
    },

    #[error("empty batch passed to {0}")]
    EmptyBatch(&'static str),

    #[error("label {label} out of range for {num_classes} classes")]
    Label { label: usize, num_classes: usize },

    #[error("protocol violation: {0}")]
    Protocol(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("non-finite value in {term}{}", .step.map(|s| format!(" at step {s}")).unwrap_or_default())]
    NumericHealth { term: String, step: Option<usize> },

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("infeasible split: class {class} has {count} samples but k = {k}")]
    InfeasibleSplit { class: usize, count: usize, k: usize },

    #[error("no same-class donor for unpaired samples of class {class}")]
    DonorExhaustion { class: usize },

    #[error("run failed for arm `{arm}`, missing rate {rate}, fold {fold}: {source}")]
    Run {
        arm: String,
        rate: f64,
        fold: usize,
        #[source]
        source: Box<PgadError>,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl PgadError {
    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        PgadError::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn shape(context: impl Into<String>, expected: usize, actual: usize) -> Self {
        PgadError::Shape {
            context: context.into(),
            expected,
            actual,
        }
    }

    /// Short machine-parsable kind tag, used by the CLI's one-line error output.
    pub fn kind(&self) -> &'static str {
        match self {
            PgadError::Config { .. } => "config",
            PgadError::Shape { .. } => "shape",
            PgadError::Range { .. } => "range",
            PgadError::EmptyBatch(_) => "empty_batch",
            PgadError::Label { .. } => "label",
            PgadError::Protocol(_) => "protocol",
            PgadError::Usage(_) => "usage",
            PgadError::Degenerate(_) => "degenerate",
            PgadError::NumericHealth { .. } => "numeric_health",
            PgadError::UndefinedMetric(_) => "undefined_metric",
            PgadError::InfeasibleSplit { .. } => "infeasible_split",
            PgadError::DonorExhaustion { .. } => "donor_exhaustion",
            PgadError::Run { .. } => "run",
            PgadError::Format { .. } => "format",
            PgadError::Io(_) => "io",
            PgadError::Csv(_) => "csv",
            PgadError::Json(_) => "json",
        }
    }
}
