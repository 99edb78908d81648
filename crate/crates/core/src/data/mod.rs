//! Leaderboard snapshots: schema, ingest, derived factors and transforms.

mod arch;
mod bracket;
mod ingest;
mod record;
mod schema;
mod summary;
mod table;

pub use arch::{map_architecture, ArchRule, ArchRules};
pub use bracket::{assign_param_bracket, ParamBracket, BRACKETS};
pub use ingest::{parse_snapshot, parse_snapshot_with_rules, SnapshotFormat};
pub use record::{ArchCategory, ModelRecord, TrainingType};
pub use schema::{BenchmarkColumn, BenchmarkSchema, MetaColumns};
pub use summary::{quantile_sorted, summarize, summary_stats, SummaryStats, DEFAULT_FRACTIONS};
pub use table::{
    compute_balance_weights, transform_column, AnalysisTable, Column, IngestReport, LogPolicy,
    RowIssue, COL_ARCH, COL_BRACKET, COL_LOG_PARAM, COL_TYPE,
};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DataError {
    #[error("snapshot is missing required column `{0}`")]
    MissingColumn(String),
    #[error("snapshot has no data rows")]
    EmptySnapshot,
    #[error("malformed snapshot at line {line}: {message}")]
    FormatError { line: usize, message: String },
    #[error("parameter count must be positive, got {0}")]
    NonPositiveParameter(f64),
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("column `{0}` is not numeric")]
    NotNumeric(String),
    #[error("column `{0}` is not categorical")]
    NotCategorical(String),
    #[error("column `{0}` has no non-missing values")]
    EmptyColumn(String),
    #[error("degenerate factor: {0}")]
    DegenerateFactor(String),
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
    #[error("architecture rule file line {line}: {message}")]
    RuleFile { line: usize, message: String },
    #[error("expected {expected} values, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("weights must be finite and positive, got {0}")]
    InvalidWeight(f64),
}

pub type Result<T> = std::result::Result<T, DataError>;

/// Share of records per parameter bracket, in bracket order.
pub fn bracket_shares(table: &AnalysisTable) -> Vec<(&'static str, f64)> {
    let n = table.len() as f64;
    BRACKETS
        .iter()
        .map(|b| {
            let count = table.records().iter().filter(|r| b.contains(r.params_b)).count();
            (b.label, if n > 0.0 { count as f64 / n } else { 0.0 })
        })
        .collect()
}
