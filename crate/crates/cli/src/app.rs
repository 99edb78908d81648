use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use leaderlens_core::anova::{
    anova_summary_csv, comparisons_csv, grouped_test, AnovaError, GroupedTestOptions,
};
use leaderlens_core::data::{compute_balance_weights, AnalysisTable, DataError, LogPolicy, SnapshotFormat, COL_ARCH};
use leaderlens_core::dist::DistError;
use leaderlens_core::gamm::{fit_gamm, parse_formula, partial_effects, GammError};
use leaderlens_core::pipeline::{
    correlation_matrix, embed_table, interplay_formula, load_table, render_report, run_suite, Factor, PipelineError,
    ReportBundle, SchemaChoice, SuiteConfig, WeightMode,
};
use leaderlens_core::synthetic::synthetic_snapshot_csv;
use leaderlens_core::tsne::{TsneError, TsneParams};

use crate::fetch::{default_cache_dir, fetch_snapshot, FetchError};

#[derive(Debug, Parser)]
#[command(name = "leaderlens", version, about = "Statistical re-evaluation of LLM leaderboard snapshots")]
struct Cli {
    /// Log level for diagnostics on stderr (error, warn, info, debug).
    #[arg(long, global = true, default_value = "warn")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Snapshot file (CSV or JSON lines).
    #[arg(long)]
    input: PathBuf,
    /// Snapshot format; guessed from the extension when omitted.
    #[arg(long)]
    format: Option<SnapshotFormat>,
    /// `default`, `appendix-d`, or a schema JSON file.
    #[arg(long, default_value = "default")]
    schema: SchemaChoice,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// none, arch-balance or score-rescale.
    #[arg(long, default_value = "none")]
    weights: WeightMode,
    /// `exclude` or `offset=E`.
    #[arg(long = "log-policy", default_value = "exclude")]
    log_policy: LogPolicy,
    /// Output file or directory, depending on the command.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn config(&self) -> SuiteConfig {
        SuiteConfig {
            input: self.input.clone(),
            format: self.format,
            schema: self.schema.clone(),
            alpha: self.alpha,
            weight_mode: self.weights,
            log_policy: self.log_policy,
            ..SuiteConfig::default()
        }
    }

    fn table(&self) -> Result<AnalysisTable> {
        let cfg = self.config();
        cfg.validate()?;
        let raw = std::fs::read(&self.input).with_context(|| format!("reading {}", self.input.display()))?;
        Ok(load_table(&raw, &cfg)?)
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Download a snapshot into the local cache.
    Fetch {
        url: String,
        #[arg(long)]
        cache_dir: Option<PathBuf>,
        /// Serve only from the cache.
        #[arg(long)]
        offline: bool,
    },
    /// Per-benchmark summary statistics and ingest bookkeeping.
    Describe {
        #[command(flatten)]
        common: Common,
    },
    /// Pairwise-complete Pearson correlations between benchmarks.
    Corr {
        #[command(flatten)]
        common: Common,
    },
    /// One-way ANOVA per benchmark, with Tukey HSD where significant.
    Anova {
        #[command(flatten)]
        common: Common,
        #[arg(long = "group-by")]
        group_by: Factor,
        /// Run Tukey HSD even when the ANOVA is not significant.
        #[arg(long)]
        force_tukey: bool,
    },
    /// Tukey HSD pairwise comparisons for every benchmark.
    Tukey {
        #[command(flatten)]
        common: Common,
        #[arg(long = "group-by")]
        group_by: Factor,
    },
    /// Fit one additive mixed model.
    Gamm {
        #[command(flatten)]
        common: Common,
        /// e.g. "log_ARC ~ s(log_Param) + re(Architecture)".
        #[arg(long)]
        formula: String,
        #[arg(long, default_value_t = 100)]
        grid: usize,
    },
    /// Each benchmark regressed on smooths of the others.
    Interplay {
        #[command(flatten)]
        common: Common,
    },
    /// 2-D t-SNE of z-scored benchmark scores.
    Tsne {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = 30.0)]
        perplexity: f64,
        #[arg(long, default_value_t = 1000)]
        iterations: usize,
    },
    /// Run the full battery from a JSON config and render the report.
    Suite {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        weights: Option<WeightMode>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        schema: Option<SchemaChoice>,
        #[arg(long = "log-policy")]
        log_policy: Option<LogPolicy>,
    },
    /// Re-render tables and plots from a saved report.json.
    Render {
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a seeded synthetic snapshot for trying the tool out.
    Synth {
        #[arg(long, default_value_t = 1200)]
        rows: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            }
            std::fs::write(p, text).with_context(|| format!("writing {}", p.display()))
        }
        None => {
            let mut so = std::io::stdout().lock();
            so.write_all(text.as_bytes()).and_then(|_| so.flush()).context("writing to stdout")
        }
    }
}

fn describe(common: &Common) -> Result<String> {
    let table = common.table()?;
    let ing = table.ingest();
    let mut s = format!(
        "records: {} parsed of {} rows ({} skipped, {} with zero parameters)\n",
        ing.parsed,
        ing.data_rows,
        ing.skipped.len(),
        ing.dropped_zero_params
    );
    for issue in &ing.skipped {
        s.push_str(&format!("  line {}: {}\n", issue.line, issue.reason));
    }
    for w in &ing.warnings {
        s.push_str(&format!("warning: {w}\n"));
    }
    s.push_str("\nbenchmark,n,mean,sd,min,median,max\n");
    for b in table.schema().benchmark_names() {
        let values: Vec<f64> = table.numeric(b)?.into_iter().flatten().collect();
        match leaderlens_core::data::summarize(&values, &leaderlens_core::data::DEFAULT_FRACTIONS) {
            Some(st) => s.push_str(&format!(
                "{b},{},{:.4},{:.4},{:.4},{:.4},{:.4}\n",
                st.n, st.mean, st.sd, st.min, st.median, st.max
            )),
            None => s.push_str(&format!("{b},0,,,,,\n")),
        }
    }
    s.push_str("\nbracket,share\n");
    for (label, share) in leaderlens_core::data::bracket_shares(&table) {
        s.push_str(&format!("{label},{share:.4}\n"));
    }
    Ok(s)
}

fn grouped(common: &Common, factor: Factor, force_tukey: bool) -> Result<Vec<leaderlens_core::anova::GroupedTestReport>> {
    let table = common.table()?;
    let options = GroupedTestOptions { alpha: common.alpha, force_tukey };
    let mut reports = Vec::new();
    for b in table.schema().benchmark_names() {
        match grouped_test(&table, factor.column(), b, options) {
            Ok(r) => reports.push(r),
            Err(e @ AnovaError::TooFewLevels { .. }) => log::warn!("{e}"),
            Err(e) => return Err(e.into()),
        }
    }
    Ok(reports)
}

/// Table and optional case weights for a GAMM under the chosen weight mode.
fn weighted_table(common: &Common) -> Result<(AnalysisTable, Option<Vec<f64>>)> {
    let table = common.table()?;
    Ok(match common.weights {
        WeightMode::None => (table, None),
        WeightMode::ArchBalance => {
            let w = compute_balance_weights(&table, COL_ARCH)?.weights().to_vec();
            (table, Some(w))
        }
        WeightMode::ScoreRescale => {
            let mut t = compute_balance_weights(&table, COL_ARCH)?.with_scores_scaled_by_weights();
            t.add_benchmark_logs(common.log_policy)?;
            (t, None)
        }
    })
}

fn term_rows(response: &str, report: &leaderlens_core::gamm::GammReport, out: &mut String) {
    for t in &report.terms {
        out.push_str(&format!(
            "{response},{},{:.6},{:.6},{},{:.6e}\n",
            t.term_id,
            t.edf,
            t.f_stat,
            t.ref_rank,
            t.p_value.value()
        ));
    }
}

fn resolve(base: Option<&Path>, p: &Path) -> PathBuf {
    match base {
        Some(b) if p.is_relative() && !p.as_os_str().is_empty() => b.join(p),
        _ => p.to_path_buf(),
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Fetch { url, cache_dir, offline } => {
            let cache = cache_dir.unwrap_or_else(default_cache_dir);
            let outcome = fetch_snapshot(&url, &cache, offline)?;
            emit(None, &(serde_json::to_string_pretty(&outcome)? + "\n"))
        }
        Command::Describe { common } => emit(common.out.as_deref(), &describe(&common)?),
        Command::Corr { common } => {
            let table = common.table()?;
            let benches = table.schema().benchmark_names();
            let m = correlation_matrix(&table, &benches)?;
            emit(common.out.as_deref(), &m.to_csv())
        }
        Command::Anova { common, group_by, force_tukey } => {
            let reports = grouped(&common, group_by, force_tukey)?;
            match &common.out {
                Some(dir) => {
                    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
                    emit(Some(&dir.join(format!("anova_{}.csv", group_by.name()))), &anova_summary_csv(&reports))?;
                    emit(Some(&dir.join(format!("tukey_{}.csv", group_by.name()))), &comparisons_csv(&reports))
                }
                None => emit(None, &anova_summary_csv(&reports)),
            }
        }
        Command::Tukey { common, group_by } => {
            let reports = grouped(&common, group_by, true)?;
            emit(common.out.as_deref(), &comparisons_csv(&reports))
        }
        Command::Gamm { common, formula, grid } => {
            let formula = parse_formula(&formula)?;
            let (table, weights) = weighted_table(&common)?;
            let fit = fit_gamm(&formula, &table, weights.as_deref())?;
            let report = serde_json::to_string_pretty(&fit.report())? + "\n";
            match &common.out {
                Some(dir) => {
                    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
                    emit(Some(&dir.join("fit.json")), &report)?;
                    for e in partial_effects(&fit, grid.max(2)) {
                        let name: String =
                            e.term_id.chars().map(|c| if c.is_ascii_alphanumeric() { c } else { '_' }).collect();
                        emit(Some(&dir.join(format!("effect_{name}.csv"))), &e.to_csv())?;
                    }
                    Ok(())
                }
                None => emit(None, &report),
            }
        }
        Command::Interplay { common } => {
            let (table, weights) = weighted_table(&common)?;
            let benches: Vec<String> = table.schema().benchmark_names().iter().map(|s| s.to_string()).collect();
            let mut out = String::from("response,term,edf,f,ref_rank,p\n");
            for b in &benches {
                let fit = fit_gamm(&interplay_formula(b, &benches)?, &table, weights.as_deref())?;
                term_rows(&format!("log_{b}"), &fit.report(), &mut out);
            }
            emit(common.out.as_deref(), &out)
        }
        Command::Tsne { common, seed, perplexity, iterations } => {
            let table = common.table()?;
            let benches: Vec<String> = table.schema().benchmark_names().iter().map(|s| s.to_string()).collect();
            let cfg = SuiteConfig {
                seed,
                tsne: TsneParams { perplexity, iterations, ..TsneParams::default() },
                ..common.config()
            };
            let entry = embed_table(&table, &benches, &cfg)?;
            for k in &entry.excluded {
                log::info!("excluded for missing scores: {k}");
            }
            emit(common.out.as_deref(), &entry.to_csv())
        }
        Command::Suite { config, input, out, seed, weights, alpha, schema, log_policy } => {
            let (mut cfg, base) = match &config {
                Some(p) => {
                    let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                    (SuiteConfig::from_json(&text)?, p.parent().map(Path::to_path_buf))
                }
                None => (SuiteConfig::default(), None),
            };
            cfg.input = resolve(base.as_deref(), &cfg.input);
            cfg.output = resolve(base.as_deref(), &cfg.output);
            if let SchemaChoice::File(p) = &cfg.schema {
                cfg.schema = SchemaChoice::File(resolve(base.as_deref(), p));
            }
            if let Some(v) = input {
                cfg.input = v;
            }
            if let Some(v) = out {
                cfg.output = v;
            }
            if let Some(v) = seed {
                cfg.seed = v;
            }
            if let Some(v) = weights {
                cfg.weight_mode = v;
            }
            if let Some(v) = alpha {
                cfg.alpha = v;
            }
            if let Some(v) = schema {
                cfg.schema = v;
            }
            if let Some(v) = log_policy {
                cfg.log_policy = v;
            }
            if cfg.input.as_os_str().is_empty() {
                bail!(PipelineError::Config("no input snapshot given (config `input` or --input)".into()));
            }
            cfg.validate()?;
            let bundle = run_suite(&cfg)?;
            for w in &bundle.warnings {
                log::warn!("{w}");
            }
            let manifest = render_report(&bundle, &cfg.output)?;
            let mut s = String::new();
            for e in &manifest {
                s.push_str(&format!("{}\t{}\n", e.bytes, cfg.output.join(&e.path).display()));
            }
            emit(None, &s)
        }
        Command::Render { report, out } => {
            let text = std::fs::read_to_string(&report).with_context(|| format!("reading {}", report.display()))?;
            let bundle: ReportBundle = serde_json::from_str(&text)
                .map_err(|e| PipelineError::Config(format!("{}: {e}", report.display())))?;
            let manifest = render_report(&bundle, &out)?;
            let s: String = manifest.iter().map(|e| format!("{}\t{}\n", e.bytes, out.join(&e.path).display())).collect();
            emit(None, &s)
        }
        Command::Synth { rows, seed, out } => {
            if rows == 0 {
                bail!(PipelineError::Config("--rows must be positive".into()));
            }
            emit(out.as_deref(), &synthetic_snapshot_csv(rows, seed))
        }
    }
}

/// 1 usage, 2 data, 3 numerical.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<PipelineError>() {
            return match e {
                PipelineError::Config(_) => 1,
                PipelineError::Gamm(g) => gamm_code(g),
                PipelineError::Tsne(t) => tsne_code(t),
                _ => 2,
            };
        }
        if let Some(g) = cause.downcast_ref::<GammError>() {
            return gamm_code(g);
        }
        if let Some(t) = cause.downcast_ref::<TsneError>() {
            return tsne_code(t);
        }
        if let Some(a) = cause.downcast_ref::<AnovaError>() {
            return match a {
                AnovaError::InvalidAlpha(_) => 1,
                AnovaError::ZeroWithinVariance | AnovaError::Dist(_) => 3,
                _ => 2,
            };
        }
        if cause.downcast_ref::<DistError>().is_some() {
            return 3;
        }
        if cause.downcast_ref::<DataError>().is_some()
            || cause.downcast_ref::<FetchError>().is_some()
            || cause.downcast_ref::<std::io::Error>().is_some()
        {
            return 2;
        }
        if cause.downcast_ref::<serde_json::Error>().is_some() {
            return 2;
        }
    }
    2
}

fn gamm_code(e: &GammError) -> i32 {
    match e {
        GammError::SyntaxError { .. } | GammError::DuplicateTerm(_) | GammError::InvalidLambda(_) => 1,
        GammError::RankDeficient | GammError::NumericalOverflow | GammError::Dist(_) => 3,
        _ => 2,
    }
}

fn tsne_code(e: &TsneError) -> i32 {
    match e {
        TsneError::NumericalOverflow(_) => 3,
        TsneError::PerplexityTooLarge { .. } | TsneError::InvalidInput(_) => 1,
        TsneError::DegenerateDistances => 2,
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let level = cli.log.parse().unwrap_or(log::LevelFilter::Warn);
    let _ = env_logger::Builder::new().filter_level(level).format_timestamp(None).try_init();
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}
