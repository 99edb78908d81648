//! The full analysis battery over one snapshot, plus report rendering.

mod corr;
mod render;
mod svg;

pub use corr::{correlation_matrix, CorrelationMatrix};
pub use render::{render_report, ManifestEntry};

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::anova::{grouped_test, pair_frequencies, GroupedTestOptions, GroupedTestReport, PairFrequency};
use crate::data::{
    bracket_shares, compute_balance_weights, parse_snapshot, summarize, AnalysisTable, BenchmarkSchema, DataError,
    IngestReport, LogPolicy, SnapshotFormat, SummaryStats, COL_ARCH, COL_BRACKET, COL_LOG_PARAM, COL_TYPE,
    DEFAULT_FRACTIONS,
};
use crate::gamm::{fit_gamm, partial_effects, Formula, GammError, GammReport, PartialEffect, TermSpec, DEFAULT_K};
use crate::tsne::{tsne_embed, Embedding, TsneError, TsneParams};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("fewer than 3 complete observations for `{0}` and `{1}`")]
    InsufficientOverlap(String, String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Gamm(#[from] GammError),
    #[error(transparent)]
    Tsne(#[from] TsneError),
}

pub type Result<T> = std::result::Result<T, PipelineError>;

pub(crate) fn io_error(path: &Path, e: std::io::Error) -> PipelineError {
    PipelineError::Io { path: path.display().to_string(), message: e.to_string() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Factor {
    Bracket,
    Type,
    Arch,
}

impl Factor {
    pub const ALL: [Factor; 3] = [Factor::Bracket, Factor::Type, Factor::Arch];

    /// Derived table column holding the factor's levels.
    pub fn column(self) -> &'static str {
        match self {
            Factor::Bracket => COL_BRACKET,
            Factor::Type => COL_TYPE,
            Factor::Arch => COL_ARCH,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Factor::Bracket => "bracket",
            Factor::Type => "type",
            Factor::Arch => "arch",
        }
    }
}

impl FromStr for Factor {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "bracket" => Ok(Factor::Bracket),
            "type" => Ok(Factor::Type),
            "arch" | "architecture" => Ok(Factor::Arch),
            other => Err(format!("unknown factor `{other}` (expected bracket, type or arch)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightMode {
    None,
    /// Case weights balancing architecture families, used in GAMM reruns.
    #[default]
    ArchBalance,
    /// Scores multiplied by the balance weights, used in GAMM reruns.
    ScoreRescale,
}

impl FromStr for WeightMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim() {
            "none" => Ok(WeightMode::None),
            "arch-balance" => Ok(WeightMode::ArchBalance),
            "score-rescale" => Ok(WeightMode::ScoreRescale),
            other => Err(format!("unknown weight mode `{other}`")),
        }
    }
}

impl fmt::Display for WeightMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WeightMode::None => "none",
            WeightMode::ArchBalance => "arch-balance",
            WeightMode::ScoreRescale => "score-rescale",
        })
    }
}

/// `default`, `appendix-d`, or a path to a schema JSON file.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum SchemaChoice {
    #[default]
    Default,
    AppendixD,
    File(PathBuf),
}

impl SchemaChoice {
    pub fn load(&self) -> Result<BenchmarkSchema> {
        match self {
            SchemaChoice::Default => Ok(BenchmarkSchema::default_six()),
            SchemaChoice::AppendixD => Ok(BenchmarkSchema::appendix_d()),
            SchemaChoice::File(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| io_error(p, e))?;
                Ok(BenchmarkSchema::from_json(&text)?)
            }
        }
    }
}

impl FromStr for SchemaChoice {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(match s.trim() {
            "default" => SchemaChoice::Default,
            "appendix-d" => SchemaChoice::AppendixD,
            "" => return Err("empty schema name".into()),
            other => SchemaChoice::File(PathBuf::from(other.strip_prefix("file:").unwrap_or(other))),
        })
    }
}

impl fmt::Display for SchemaChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SchemaChoice::Default => f.write_str("default"),
            SchemaChoice::AppendixD => f.write_str("appendix-d"),
            SchemaChoice::File(p) => write!(f, "{}", p.display()),
        }
    }
}

impl Serialize for SchemaChoice {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for SchemaChoice {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Stages {
    pub correlations: bool,
    pub grouped_tests: bool,
    pub gamm: bool,
    pub by_type: bool,
    pub interplay: bool,
    pub tsne: bool,
}

impl Default for Stages {
    fn default() -> Self {
        Self { correlations: true, grouped_tests: true, gamm: true, by_type: true, interplay: true, tsne: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuiteConfig {
    pub input: PathBuf,
    /// Guessed from the input extension when absent.
    pub format: Option<SnapshotFormat>,
    pub schema: SchemaChoice,
    pub factors: Vec<Factor>,
    pub alpha: f64,
    pub force_tukey: bool,
    pub seed: u64,
    pub weight_mode: WeightMode,
    pub log_policy: LogPolicy,
    pub output: PathBuf,
    pub stages: Stages,
    pub tsne: TsneParams,
    /// Points per partial-effect curve.
    pub effect_grid: usize,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            input: PathBuf::new(),
            format: None,
            schema: SchemaChoice::Default,
            factors: Factor::ALL.to_vec(),
            alpha: 0.05,
            force_tukey: false,
            seed: 42,
            weight_mode: WeightMode::ArchBalance,
            log_policy: LogPolicy::ExcludeNonPositive,
            output: PathBuf::from("leaderlens-out"),
            stages: Stages::default(),
            tsne: TsneParams::default(),
            effect_grid: 100,
        }
    }
}

impl SuiteConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(PipelineError::Config(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if self.effect_grid < 2 {
            return Err(PipelineError::Config("effect_grid must be at least 2".into()));
        }
        Ok(())
    }

    pub fn snapshot_format(&self) -> SnapshotFormat {
        self.format.unwrap_or_else(|| SnapshotFormat::from_path(&self.input))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub tool: String,
    pub version: String,
    pub input_sha256: String,
    pub input_bytes: usize,
    /// Seconds since the epoch from `SOURCE_DATE_EPOCH`; null when unset.
    pub timestamp: Option<u64>,
    pub config: SuiteConfig,
    pub n_records: usize,
    pub ingest: IngestReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSummary {
    pub column: String,
    pub stats: Option<SummaryStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorTests {
    pub factor: Factor,
    pub column: String,
    pub reports: Vec<GroupedTestReport>,
    pub pair_frequencies: Vec<PairFrequency>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitEntry {
    pub benchmark: String,
    pub report: GammReport,
    pub effects: Vec<PartialEffect>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GammBattery {
    pub gamm_fits: Vec<FitEntry>,
    pub by_type_fits: Vec<FitEntry>,
    pub interplay_fits: Vec<FitEntry>,
}

impl GammBattery {
    pub fn stages(&self) -> [(&'static str, &[FitEntry]); 3] {
        [("gamm", &self.gamm_fits), ("by_type", &self.by_type_fits), ("interplay", &self.interplay_fits)]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingEntry {
    pub embedding: Embedding,
    pub bracket: Vec<String>,
    #[serde(rename = "type")]
    pub training_type: Vec<String>,
    pub arch: Vec<String>,
    /// Records left out for missing scores.
    pub excluded: Vec<String>,
    pub features: Vec<String>,
}

impl EmbeddingEntry {
    pub fn labels(&self, factor: Factor) -> &[String] {
        match factor {
            Factor::Bracket => &self.bracket,
            Factor::Type => &self.training_type,
            Factor::Arch => &self.arch,
        }
    }

    /// `model,x,y,bracket,type,arch`
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["model", "x", "y", "bracket", "type", "arch"]).expect("in-memory write");
        for (i, key) in self.embedding.keys.iter().enumerate() {
            let [x, y] = self.embedding.coords[i];
            w.write_record([
                key.as_str(),
                &format!("{x:.10}"),
                &format!("{y:.10}"),
                &self.bracket[i],
                &self.training_type[i],
                &self.arch[i],
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8 csv")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedBattery {
    pub mode: WeightMode,
    pub fits: GammBattery,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportBundle {
    pub metadata: Metadata,
    pub describe: Vec<ColumnSummary>,
    pub bracket_shares: Vec<(String, f64)>,
    pub correlations: Option<CorrelationMatrix>,
    pub grouped_tests: Vec<FactorTests>,
    #[serde(flatten)]
    pub gamm: GammBattery,
    /// GAMM battery rerun under the configured weight mode.
    pub weighted: Option<WeightedBattery>,
    pub embedding: Option<EmbeddingEntry>,
    pub warnings: Vec<String>,
}

impl ReportBundle {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("bundle serializes");
        s.push('\n');
        s
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn source_date_epoch() -> Option<u64> {
    std::env::var("SOURCE_DATE_EPOCH").ok().and_then(|v| v.trim().parse().ok())
}

/// Reads `config.input` and runs the battery.
pub fn run_suite(config: &SuiteConfig) -> Result<ReportBundle> {
    let raw = std::fs::read(&config.input).map_err(|e| io_error(&config.input, e))?;
    run_suite_on_bytes(&raw, config)
}

pub fn load_table(raw: &[u8], config: &SuiteConfig) -> Result<AnalysisTable> {
    let schema = config.schema.load()?;
    let mut table = parse_snapshot(raw, config.snapshot_format(), &schema)?;
    table.add_benchmark_logs(config.log_policy)?;
    Ok(table)
}

pub fn run_suite_on_bytes(raw: &[u8], config: &SuiteConfig) -> Result<ReportBundle> {
    config.validate()?;
    let table = load_table(raw, config)?;
    let benches: Vec<String> = table.schema().benchmark_names().iter().map(|s| s.to_string()).collect();
    let mut warnings: Vec<String> = table.ingest().warnings.iter().map(|w| format!("ingest: {w}")).collect();

    let describe = benches
        .iter()
        .map(|b| {
            let values: Vec<f64> = table.numeric(b).map(|v| v.into_iter().flatten().collect()).unwrap_or_default();
            ColumnSummary { column: b.clone(), stats: summarize(&values, &DEFAULT_FRACTIONS) }
        })
        .collect();

    let correlations = if config.stages.correlations {
        let cols: Vec<&str> = benches.iter().map(|s| s.as_str()).collect();
        match correlation_matrix(&table, &cols) {
            Ok(m) => Some(m),
            Err(e) => {
                warnings.push(format!("correlations: {e}"));
                None
            }
        }
    } else {
        None
    };

    let grouped_tests = if config.stages.grouped_tests {
        grouped_stage(&table, config, &benches, &mut warnings)
    } else {
        Vec::new()
    };

    let gamm = gamm_battery(&table, &benches, None, config, "", &mut warnings);
    let weighted = match config.weight_mode {
        WeightMode::None => None,
        _ if !(config.stages.gamm || config.stages.by_type || config.stages.interplay) => None,
        mode => match compute_balance_weights(&table, COL_ARCH) {
            Ok(balanced) => {
                let tag = format!("{mode} ");
                let fits = if mode == WeightMode::ArchBalance {
                    let w = balanced.weights().to_vec();
                    gamm_battery(&table, &benches, Some(&w), config, &tag, &mut warnings)
                } else {
                    let mut rescaled = balanced.with_scores_scaled_by_weights();
                    match rescaled.add_benchmark_logs(config.log_policy) {
                        Ok(_) => gamm_battery(&rescaled, &benches, None, config, &tag, &mut warnings),
                        Err(e) => {
                            warnings.push(format!("{tag}rerun: {e}"));
                            GammBattery::default()
                        }
                    }
                };
                Some(WeightedBattery { mode, fits })
            }
            Err(e) => {
                warnings.push(format!("{mode} rerun: {e}"));
                None
            }
        },
    };

    let embedding = if config.stages.tsne {
        match embed_table(&table, &benches, config) {
            Ok(e) => Some(e),
            Err(e) => {
                warnings.push(format!("tsne: {e}"));
                None
            }
        }
    } else {
        None
    };

    let metadata = Metadata {
        tool: "leaderlens".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        input_sha256: sha256_hex(raw),
        input_bytes: raw.len(),
        timestamp: source_date_epoch(),
        // Where the report is written is not part of the analysis.
        config: SuiteConfig { output: PathBuf::new(), ..config.clone() },
        n_records: table.len(),
        ingest: table.ingest().clone(),
    };
    Ok(ReportBundle {
        metadata,
        describe,
        bracket_shares: bracket_shares(&table).into_iter().map(|(l, s)| (l.to_string(), s)).collect(),
        correlations,
        grouped_tests,
        gamm,
        weighted,
        embedding,
        warnings,
    })
}

fn grouped_stage(
    table: &AnalysisTable,
    config: &SuiteConfig,
    benches: &[String],
    warnings: &mut Vec<String>,
) -> Vec<FactorTests> {
    let options = GroupedTestOptions { alpha: config.alpha, force_tukey: config.force_tukey };
    let mut out = Vec::new();
    for &factor in &config.factors {
        let mut reports = Vec::new();
        for b in benches {
            match grouped_test(table, factor.column(), b, options) {
                Ok(r) => reports.push(r),
                Err(e) => warnings.push(format!("grouped tests [{} / {b}]: {e}", factor.name())),
            }
        }
        let pair_frequencies = pair_frequencies(&reports);
        out.push(FactorTests { factor, column: factor.column().to_string(), reports, pair_frequencies });
    }
    out
}

fn log_name(b: &str) -> String {
    format!("log_{b}")
}

pub fn main_formula(benchmark: &str) -> std::result::Result<Formula, GammError> {
    Formula::new(
        &log_name(benchmark),
        vec![TermSpec::smooth(COL_LOG_PARAM, DEFAULT_K), TermSpec::random_effect(COL_ARCH)],
    )
}

pub fn by_type_formula(benchmark: &str) -> std::result::Result<Formula, GammError> {
    Formula::new(
        &log_name(benchmark),
        vec![
            TermSpec::smooth_by(COL_LOG_PARAM, COL_TYPE, DEFAULT_K),
            TermSpec::factor(COL_TYPE),
            TermSpec::random_effect(COL_ARCH),
        ],
    )
}

pub fn interplay_formula(benchmark: &str, all: &[String]) -> std::result::Result<Formula, GammError> {
    let mut terms: Vec<TermSpec> =
        all.iter().filter(|b| *b != benchmark).map(|b| TermSpec::smooth(&log_name(b), DEFAULT_K)).collect();
    terms.push(TermSpec::random_effect(COL_ARCH));
    Formula::new(&log_name(benchmark), terms)
}

fn fit_entry(table: &AnalysisTable, benchmark: &str, formula: &Formula, weights: Option<&[f64]>, grid: usize) -> std::result::Result<FitEntry, GammError> {
    let fit = fit_gamm(formula, table, weights)?;
    Ok(FitEntry { benchmark: benchmark.to_string(), report: fit.report(), effects: partial_effects(&fit, grid) })
}

/// Runs the enabled GAMM stages. Fits are independent, so each stage runs its
/// benchmarks on scoped threads and collects results in schema order.
fn gamm_battery(
    table: &AnalysisTable,
    benches: &[String],
    weights: Option<&[f64]>,
    config: &SuiteConfig,
    tag: &str,
    warnings: &mut Vec<String>,
) -> GammBattery {
    let stages: [(bool, &str, fn(&str, &[String]) -> std::result::Result<Formula, GammError>); 3] = [
        (config.stages.gamm, "gamm", |b, _| main_formula(b)),
        (config.stages.by_type, "by_type", |b, _| by_type_formula(b)),
        (config.stages.interplay, "interplay", interplay_formula),
    ];
    let mut battery = GammBattery::default();
    for (enabled, name, make) in stages {
        if !enabled {
            continue;
        }
        let results: Vec<std::result::Result<FitEntry, GammError>> = std::thread::scope(|s| {
            let handles: Vec<_> = benches
                .iter()
                .map(|b| {
                    let formula = make(b, benches);
                    s.spawn(move || fit_entry(table, b, &formula?, weights, config.effect_grid))
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("fit thread panicked")).collect()
        });
        let mut fits = Vec::new();
        for (b, r) in benches.iter().zip(results) {
            match r {
                Ok(f) => fits.push(f),
                Err(e) => warnings.push(format!("{tag}{name} [{b}]: {e}")),
            }
        }
        match name {
            "gamm" => battery.gamm_fits = fits,
            "by_type" => battery.by_type_fits = fits,
            _ => battery.interplay_fits = fits,
        }
    }
    battery
}

/// t-SNE of z-scored benchmark scores; records missing any score are listed, not imputed.
pub fn embed_table(table: &AnalysisTable, benches: &[String], config: &SuiteConfig) -> Result<EmbeddingEntry> {
    let cols: Vec<Vec<Option<f64>>> = benches.iter().map(|b| table.numeric(b)).collect::<std::result::Result<_, _>>()?;
    let bracket = table.categorical(COL_BRACKET)?;
    let types = table.categorical(COL_TYPE)?;
    let arch = table.categorical(COL_ARCH)?;
    let mut seen = std::collections::BTreeMap::<String, usize>::new();
    let mut keys = Vec::new();
    let mut rows = Vec::new();
    let mut excluded = Vec::new();
    for (i, r) in table.records().iter().enumerate() {
        let count = seen.entry(r.name.clone()).or_default();
        *count += 1;
        let key = if *count == 1 { r.name.clone() } else { format!("{}#{}", r.name, count) };
        let row: Option<Vec<f64>> = cols.iter().map(|c| c[i]).collect();
        match row {
            Some(v) => {
                keys.push((key, i));
                rows.push(v);
            }
            None => excluded.push(key),
        }
    }
    let d = benches.len();
    let n = rows.len();
    if n < 2 {
        return Err(PipelineError::Config(format!("only {n} records have every benchmark score")));
    }
    for j in 0..d {
        let mean = rows.iter().map(|r| r[j]).sum::<f64>() / n as f64;
        let sd = (rows.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        for r in rows.iter_mut() {
            r[j] = if sd > 0.0 { (r[j] - mean) / sd } else { 0.0 };
        }
    }
    let names: Vec<String> = keys.iter().map(|k| k.0.clone()).collect();
    let embedding = tsne_embed(&rows, &names, config.seed, &config.tsne)?;
    let label = |col: &[Option<String>], i: usize| col[i].clone().unwrap_or_default();
    Ok(EmbeddingEntry {
        bracket: keys.iter().map(|k| label(&bracket, k.1)).collect(),
        training_type: keys.iter().map(|k| label(&types, k.1)).collect(),
        arch: keys.iter().map(|k| label(&arch, k.1)).collect(),
        embedding,
        excluded,
        features: benches.to_vec(),
    })
}
