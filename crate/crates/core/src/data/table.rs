use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{assign_param_bracket, BenchmarkSchema, DataError, ModelRecord, Result};

pub const COL_LOG_PARAM: &str = "log_Param";
pub const COL_TYPE: &str = "Type";
pub const COL_ARCH: &str = "Architecture";
pub const COL_BRACKET: &str = "Bracket";

/// A derived column; `None` entries are missing values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Column {
    Numeric(Vec<Option<f64>>),
    Categorical(Vec<Option<String>>),
}

impl Column {
    pub fn len(&self) -> usize {
        match self {
            Column::Numeric(v) => v.len(),
            Column::Categorical(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// How non-positive values are handled when taking logs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LogPolicy {
    /// Values ≤ 0 become missing.
    ExcludeNonPositive,
    /// ln(v + ε).
    Offset(f64),
}

impl Default for LogPolicy {
    fn default() -> Self {
        LogPolicy::ExcludeNonPositive
    }
}

impl fmt::Display for LogPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LogPolicy::ExcludeNonPositive => f.write_str("exclude"),
            LogPolicy::Offset(e) => write!(f, "offset={e}"),
        }
    }
}

impl FromStr for LogPolicy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let s = s.trim();
        if s == "exclude" {
            return Ok(LogPolicy::ExcludeNonPositive);
        }
        if let Some(v) = s.strip_prefix("offset=") {
            let eps: f64 = v.parse().map_err(|_| format!("bad offset `{v}`"))?;
            if !(eps > 0.0) || !eps.is_finite() {
                return Err(format!("offset must be positive, got {eps}"));
            }
            return Ok(LogPolicy::Offset(eps));
        }
        Err(format!("unknown log policy `{s}` (expected `exclude` or `offset=E`)"))
    }
}

impl Serialize for LogPolicy {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for LogPolicy {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowIssue {
    pub line: usize,
    pub reason: String,
}

/// Bookkeeping from ingest: `parsed + skipped + dropped_zero_params == data_rows`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub data_rows: usize,
    pub parsed: usize,
    pub dropped_zero_params: usize,
    pub skipped: Vec<RowIssue>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BaseColumn {
    Model,
    Params,
    TrainingType,
    ArchitectureRaw,
    Precision,
    License,
}

const BASE_COLUMNS: [(&str, BaseColumn); 6] = [
    ("model", BaseColumn::Model),
    ("params_b", BaseColumn::Params),
    ("type", BaseColumn::TrainingType),
    ("architecture", BaseColumn::ArchitectureRaw),
    ("precision", BaseColumn::Precision),
    ("license", BaseColumn::License),
];

const ALIASES: [(&str, &str); 4] =
    [("bracket", COL_BRACKET), ("arch", COL_ARCH), ("arch_category", COL_ARCH), ("log_params_b", COL_LOG_PARAM)];

enum Source<'a> {
    Base(BaseColumn),
    Benchmark(&'a str),
    Derived(&'a str),
}

/// Leaderboard records plus derived columns and per-record case weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisTable {
    records: Vec<ModelRecord>,
    derived: BTreeMap<String, Column>,
    weights: Vec<f64>,
    schema: BenchmarkSchema,
    ingest: IngestReport,
}

impl AnalysisTable {
    /// Builds a table and derives `log_Param`, `Type`, `Architecture` and `Bracket`.
    pub fn from_records(records: Vec<ModelRecord>, schema: BenchmarkSchema) -> Result<Self> {
        schema.validate()?;
        let mut records = records;
        for r in &mut records {
            if !(r.params_b > 0.0) {
                return Err(DataError::NonPositiveParameter(r.params_b));
            }
            for b in &schema.benchmarks {
                r.scores.entry(b.column.clone()).or_insert(None);
            }
        }
        let n = records.len();
        let mut table = Self {
            derived: BTreeMap::new(),
            weights: vec![1.0; n],
            ingest: IngestReport { data_rows: n, parsed: n, ..Default::default() },
            records,
            schema,
        };
        table.refresh_standard_columns()?;
        Ok(table)
    }

    fn refresh_standard_columns(&mut self) -> Result<()> {
        let log_param = self.records.iter().map(|r| Some(r.params_b.ln())).collect();
        let types = self.records.iter().map(|r| Some(r.training_type.label().to_string())).collect();
        let arch = self.records.iter().map(|r| Some(r.arch_category.label().to_string())).collect();
        let mut brackets = Vec::with_capacity(self.records.len());
        for r in &self.records {
            brackets.push(Some(assign_param_bracket(r.params_b)?.label.to_string()));
        }
        self.derived.insert(COL_LOG_PARAM.into(), Column::Numeric(log_param));
        self.derived.insert(COL_TYPE.into(), Column::Categorical(types));
        self.derived.insert(COL_ARCH.into(), Column::Categorical(arch));
        self.derived.insert(COL_BRACKET.into(), Column::Categorical(brackets));
        Ok(())
    }

    pub(crate) fn set_ingest_report(&mut self, report: IngestReport) {
        self.ingest = report;
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[ModelRecord] {
        &self.records
    }

    pub fn schema(&self) -> &BenchmarkSchema {
        &self.schema
    }

    pub fn ingest(&self) -> &IngestReport {
        &self.ingest
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn set_weights(&mut self, weights: Vec<f64>) -> Result<()> {
        if weights.len() != self.len() {
            return Err(DataError::LengthMismatch { expected: self.len(), got: weights.len() });
        }
        if let Some(w) = weights.iter().find(|w| !(**w > 0.0) || !w.is_finite()) {
            return Err(DataError::InvalidWeight(*w));
        }
        self.weights = weights;
        Ok(())
    }

    pub fn column_names(&self) -> Vec<String> {
        let mut names: Vec<String> = BASE_COLUMNS.iter().map(|(n, _)| n.to_string()).collect();
        names.extend(self.schema.benchmarks.iter().map(|b| b.column.clone()));
        names.extend(self.derived.keys().cloned());
        names
    }

    fn resolve<'a>(&'a self, name: &'a str) -> Option<Source<'a>> {
        if let Some((k, _)) = self.derived.get_key_value(name) {
            return Some(Source::Derived(k));
        }
        if let Some(b) = self.schema.benchmarks.iter().find(|b| b.column == name) {
            return Some(Source::Benchmark(&b.column));
        }
        if let Some((_, c)) = BASE_COLUMNS.iter().find(|(n, _)| *n == name) {
            return Some(Source::Base(*c));
        }
        if let Some((_, target)) = ALIASES.iter().find(|(a, _)| a.eq_ignore_ascii_case(name)) {
            return self.resolve(target);
        }
        // Case-insensitive fallback, same priority order as exact lookup.
        if let Some((k, _)) = self.derived.iter().find(|(k, _)| k.eq_ignore_ascii_case(name)) {
            return Some(Source::Derived(k));
        }
        if let Some(b) = self.schema.benchmarks.iter().find(|b| b.column.eq_ignore_ascii_case(name)) {
            return Some(Source::Benchmark(&b.column));
        }
        BASE_COLUMNS.iter().find(|(n, _)| n.eq_ignore_ascii_case(name)).map(|(_, c)| Source::Base(*c))
    }

    /// Canonical stored name of a column, after aliases and case folding.
    pub fn canonical_name(&self, name: &str) -> Result<String> {
        match self.resolve(name) {
            Some(Source::Derived(k)) => Ok(k.to_string()),
            Some(Source::Benchmark(b)) => Ok(b.to_string()),
            Some(Source::Base(c)) => Ok(BASE_COLUMNS.iter().find(|(_, b)| *b == c).unwrap().0.to_string()),
            None => Err(DataError::UnknownColumn(name.to_string())),
        }
    }

    pub fn column(&self, name: &str) -> Result<Column> {
        let source = self.resolve(name).ok_or_else(|| DataError::UnknownColumn(name.to_string()))?;
        Ok(match source {
            Source::Derived(k) => self.derived[k].clone(),
            Source::Benchmark(b) => Column::Numeric(self.records.iter().map(|r| r.score(b)).collect()),
            Source::Base(BaseColumn::Params) => {
                Column::Numeric(self.records.iter().map(|r| Some(r.params_b)).collect())
            }
            Source::Base(c) => Column::Categorical(
                self.records
                    .iter()
                    .map(|r| match c {
                        BaseColumn::Model => Some(r.name.clone()),
                        BaseColumn::TrainingType => Some(r.training_type.label().to_string()),
                        BaseColumn::ArchitectureRaw => Some(r.architecture_raw.clone()),
                        BaseColumn::Precision => r.precision.clone(),
                        BaseColumn::License => r.license.clone(),
                        BaseColumn::Params => unreachable!(),
                    })
                    .collect(),
            ),
        })
    }

    pub fn numeric(&self, name: &str) -> Result<Vec<Option<f64>>> {
        match self.column(name)? {
            Column::Numeric(v) => Ok(v),
            Column::Categorical(_) => Err(DataError::NotNumeric(name.to_string())),
        }
    }

    pub fn categorical(&self, name: &str) -> Result<Vec<Option<String>>> {
        match self.column(name)? {
            Column::Categorical(v) => Ok(v),
            Column::Numeric(_) => Err(DataError::NotCategorical(name.to_string())),
        }
    }

    pub fn add_column(&mut self, name: &str, column: Column) -> Result<()> {
        if column.len() != self.len() {
            return Err(DataError::LengthMismatch { expected: self.len(), got: column.len() });
        }
        if self.schema.benchmarks.iter().any(|b| b.column == name)
            || BASE_COLUMNS.iter().any(|(n, _)| *n == name)
        {
            return Err(DataError::InvalidSchema(format!("`{name}` shadows a snapshot column")));
        }
        self.derived.insert(name.to_string(), column);
        Ok(())
    }

    /// Adds `log_<source>` under the given policy and returns the new column's name.
    pub fn add_log_column(&mut self, source: &str, policy: LogPolicy) -> Result<String> {
        let canonical = self.canonical_name(source)?;
        let values = self.numeric(&canonical)?;
        let logged = values
            .into_iter()
            .map(|v| {
                v.and_then(|v| match policy {
                    LogPolicy::ExcludeNonPositive => (v > 0.0).then(|| v.ln()),
                    LogPolicy::Offset(eps) => {
                        let shifted = v + eps;
                        (shifted > 0.0).then(|| shifted.ln())
                    }
                })
                .filter(|v| v.is_finite())
            })
            .collect();
        let name = format!("log_{canonical}");
        self.derived.insert(name.clone(), Column::Numeric(logged));
        Ok(name)
    }

    /// Adds `log_<B>` for every schema benchmark.
    pub fn add_benchmark_logs(&mut self, policy: LogPolicy) -> Result<Vec<String>> {
        let names: Vec<String> = self.schema.benchmarks.iter().map(|b| b.column.clone()).collect();
        names.iter().map(|b| self.add_log_column(b, policy)).collect()
    }

    /// Row subset in the given order; derived columns and weights follow.
    pub fn select(&self, rows: &[usize]) -> Self {
        let records = rows.iter().map(|&i| self.records[i].clone()).collect();
        let derived = self
            .derived
            .iter()
            .map(|(k, c)| {
                let c = match c {
                    Column::Numeric(v) => Column::Numeric(rows.iter().map(|&i| v[i]).collect()),
                    Column::Categorical(v) => {
                        Column::Categorical(rows.iter().map(|&i| v[i].clone()).collect())
                    }
                };
                (k.clone(), c)
            })
            .collect();
        Self {
            records,
            derived,
            weights: rows.iter().map(|&i| self.weights[i]).collect(),
            schema: self.schema.clone(),
            ingest: self.ingest.clone(),
        }
    }

    /// Copy with every benchmark score multiplied by the record's weight and weights reset to 1.
    /// Derived columns other than the standard ones are dropped since they may depend on scores.
    pub fn with_scores_scaled_by_weights(&self) -> Self {
        let mut records = self.records.clone();
        for (r, w) in records.iter_mut().zip(&self.weights) {
            for v in r.scores.values_mut() {
                if let Some(s) = v {
                    *s *= w;
                }
            }
        }
        let mut out = Self {
            records,
            derived: BTreeMap::new(),
            weights: vec![1.0; self.len()],
            schema: self.schema.clone(),
            ingest: self.ingest.clone(),
        };
        out.refresh_standard_columns().expect("records already validated");
        out
    }

    /// Distinct non-missing levels of a categorical column, sorted.
    pub fn levels(&self, name: &str) -> Result<Vec<String>> {
        let col = self.categorical(name)?;
        Ok(col.into_iter().flatten().collect::<BTreeSet<_>>().into_iter().collect())
    }
}

/// Adds `log_<source>`; functional form of [`AnalysisTable::add_log_column`].
pub fn transform_column(table: &AnalysisTable, source: &str, policy: LogPolicy) -> Result<AnalysisTable> {
    let mut out = table.clone();
    out.add_log_column(source, policy)?;
    Ok(out)
}

/// Case weights `(N/K)/n_c` so each of the K levels of `factor` carries total weight N/K.
pub fn compute_balance_weights(table: &AnalysisTable, factor: &str) -> Result<AnalysisTable> {
    let col = table.categorical(factor)?;
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for (i, v) in col.iter().enumerate() {
        let level = v.as_deref().ok_or_else(|| {
            DataError::DegenerateFactor(format!("record {i} has no `{factor}` level"))
        })?;
        *counts.entry(level).or_default() += 1;
    }
    if counts.len() < 2 {
        return Err(DataError::DegenerateFactor(format!(
            "`{factor}` has {} level(s); need at least 2",
            counts.len()
        )));
    }
    let n = col.len() as f64;
    let k = counts.len() as f64;
    let weights = col
        .iter()
        .map(|v| (n / k) / counts[v.as_deref().unwrap()] as f64)
        .collect();
    let mut out = table.clone();
    out.set_weights(weights)?;
    Ok(out)
}
