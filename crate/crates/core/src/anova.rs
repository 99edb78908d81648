//! One-way ANOVA and Tukey HSD over grouped score columns.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{AnalysisTable, DataError};
use crate::dist::{f_sf, studentized_range_cdf, studentized_range_quantile, DistError, PValue, StudentizedRangeParams};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnovaError {
    #[error("group `{0}` has fewer than 2 values")]
    DegenerateGroups(String),
    #[error("all groups are constant; within-group variance is zero")]
    ZeroWithinVariance,
    #[error("fewer than 2 usable levels for `{benchmark}` grouped by `{factor}`")]
    TooFewLevels { factor: String, benchmark: String },
    #[error("alpha must lie in (0, 1), got {0}")]
    InvalidAlpha(f64),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Dist(#[from] DistError),
}

pub type Result<T> = std::result::Result<T, AnovaError>;

pub type Groups = BTreeMap<String, Vec<f64>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnovaResult {
    pub f_stat: f64,
    pub df_between: usize,
    pub df_within: usize,
    pub ss_between: f64,
    pub ss_within: f64,
    pub p: PValue,
    pub group_sizes: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TukeyComparison {
    pub level_a: String,
    pub level_b: String,
    /// mean(level_a) − mean(level_b)
    pub mean_diff: f64,
    pub se: f64,
    pub q_stat: f64,
    pub p_adj: PValue,
    pub ci_low: f64,
    pub ci_high: f64,
    pub significant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupedTestReport {
    pub factor: String,
    pub benchmark: String,
    pub anova: AnovaResult,
    pub comparisons: Vec<TukeyComparison>,
    pub alpha: f64,
    /// Levels left out of this benchmark's test for having < 2 usable values.
    pub dropped_levels: Vec<String>,
    pub tukey_forced: bool,
}

struct GroupStats {
    n: usize,
    mean: f64,
    ss: f64,
}

fn group_stats(values: &[f64]) -> GroupStats {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    // second pass correction keeps the mean exact to rounding
    let corr = values.iter().map(|v| v - mean).sum::<f64>() / n as f64;
    let mean = mean + corr;
    let ss = values.iter().map(|v| (v - mean).powi(2)).sum();
    GroupStats { n, mean, ss }
}

struct Decomposition {
    stats: BTreeMap<String, GroupStats>,
    n_total: usize,
    ss_between: f64,
    ss_within: f64,
}

fn decompose(groups: &Groups) -> Result<Decomposition> {
    if groups.len() < 2 {
        return Err(AnovaError::DegenerateGroups(
            groups.keys().next().cloned().unwrap_or_default(),
        ));
    }
    if let Some((level, _)) = groups.iter().find(|(_, v)| v.len() < 2) {
        return Err(AnovaError::DegenerateGroups(level.clone()));
    }
    if let Some(bad) = groups.values().flatten().find(|v| !v.is_finite()) {
        return Err(DistError::DomainError(format!("non-finite observation {bad}")).into());
    }
    let stats: BTreeMap<String, GroupStats> =
        groups.iter().map(|(k, v)| (k.clone(), group_stats(v))).collect();
    let n_total: usize = stats.values().map(|s| s.n).sum();
    let grand = stats.values().map(|s| s.n as f64 * s.mean).sum::<f64>() / n_total as f64;
    let ss_between = stats.values().map(|s| s.n as f64 * (s.mean - grand).powi(2)).sum::<f64>();
    let ss_within = stats.values().map(|s| s.ss).sum::<f64>();

    let scale = groups.values().flatten().map(|v| (v - grand).abs()).fold(0.0, f64::max);
    let floor = n_total as f64 * (16.0 * f64::EPSILON * scale.max(grand.abs())).powi(2);
    if ss_within <= floor {
        return Err(AnovaError::ZeroWithinVariance);
    }
    Ok(Decomposition { stats, n_total, ss_between, ss_within })
}

pub fn one_way_anova(groups: &Groups) -> Result<AnovaResult> {
    let d = decompose(groups)?;
    Ok(anova_from(&d))
}

fn anova_from(d: &Decomposition) -> AnovaResult {
    let k = d.stats.len();
    let df_between = k - 1;
    let df_within = d.n_total - k;
    let f_stat = (d.ss_between / df_between as f64) / (d.ss_within / df_within as f64);
    let p = f_sf(f_stat, df_between as f64, df_within as f64).unwrap_or(f64::NAN);
    AnovaResult {
        f_stat,
        df_between,
        df_within,
        ss_between: d.ss_between,
        ss_within: d.ss_within,
        p: PValue::new(p),
        group_sizes: d.stats.iter().map(|(k, s)| (k.clone(), s.n)).collect(),
    }
}

/// Shared pieces of a Tukey–Kramer family: MSE, the range distribution and its critical value.
struct TukeyFamily {
    mse: f64,
    params: StudentizedRangeParams,
    q_crit: f64,
    alpha: f64,
}

impl TukeyFamily {
    fn new(d: &Decomposition, alpha: f64) -> Result<Self> {
        check_alpha(alpha)?;
        let k = d.stats.len();
        let df = (d.n_total - k) as f64;
        let params = StudentizedRangeParams::new(k, df)?;
        Ok(Self {
            mse: d.ss_within / df,
            params,
            q_crit: studentized_range_quantile(1.0 - alpha, params)?,
            alpha,
        })
    }

    fn compare(&self, a: (&str, &GroupStats), b: (&str, &GroupStats)) -> Result<TukeyComparison> {
        let mean_diff = a.1.mean - b.1.mean;
        let se = (self.mse / 2.0 * (1.0 / a.1.n as f64 + 1.0 / b.1.n as f64)).sqrt();
        let q_stat = mean_diff.abs() / se;
        let p_adj = PValue::new(1.0 - studentized_range_cdf(q_stat, self.params)?);
        let half = self.q_crit * se;
        Ok(TukeyComparison {
            level_a: a.0.to_string(),
            level_b: b.0.to_string(),
            mean_diff,
            se,
            q_stat,
            p_adj,
            ci_low: mean_diff - half,
            ci_high: mean_diff + half,
            significant: p_adj.is_significant(self.alpha),
        })
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(AnovaError::InvalidAlpha(alpha))
    }
}

/// All K(K−1)/2 Tukey–Kramer comparisons, pairs in sorted level order.
pub fn tukey_hsd(groups: &Groups, alpha: f64) -> Result<Vec<TukeyComparison>> {
    let d = decompose(groups)?;
    tukey_from(&d, alpha)
}

fn tukey_from(d: &Decomposition, alpha: f64) -> Result<Vec<TukeyComparison>> {
    let family = TukeyFamily::new(d, alpha)?;
    let levels: Vec<(&String, &GroupStats)> = d.stats.iter().collect();
    let mut out = Vec::with_capacity(levels.len() * (levels.len() - 1) / 2);
    for i in 0..levels.len() {
        for j in i + 1..levels.len() {
            out.push(family.compare(
                (levels[i].0, levels[i].1),
                (levels[j].0, levels[j].1),
            )?);
        }
    }
    Ok(out)
}

/// A single Tukey–Kramer comparison in the given orientation, within the full family.
pub fn tukey_pair(groups: &Groups, level_a: &str, level_b: &str, alpha: f64) -> Result<TukeyComparison> {
    let d = decompose(groups)?;
    let family = TukeyFamily::new(&d, alpha)?;
    let get = |l: &str| {
        d.stats
            .get_key_value(l)
            .ok_or_else(|| AnovaError::Data(DataError::UnknownColumn(l.to_string())))
    };
    let (ka, sa) = get(level_a)?;
    let (kb, sb) = get(level_b)?;
    family.compare((ka, sa), (kb, sb))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupedTestOptions {
    pub alpha: f64,
    /// Run Tukey even when the ANOVA is not significant.
    pub force_tukey: bool,
}

impl Default for GroupedTestOptions {
    fn default() -> Self {
        Self { alpha: 0.05, force_tukey: false }
    }
}

/// Groups one score column by a categorical factor, dropping rows with a missing value on either.
pub fn group_values(table: &AnalysisTable, factor: &str, column: &str) -> Result<Groups> {
    let levels = table.categorical(factor)?;
    let values = table.numeric(column)?;
    let mut groups = Groups::new();
    for (level, value) in levels.into_iter().zip(values) {
        if let (Some(level), Some(value)) = (level, value) {
            groups.entry(level).or_default().push(value);
        }
    }
    Ok(groups)
}

/// One report per schema benchmark, in schema order.
pub fn run_grouped_tests(
    table: &AnalysisTable,
    factor: &str,
    options: GroupedTestOptions,
) -> Result<Vec<GroupedTestReport>> {
    check_alpha(options.alpha)?;
    let factor_name = table.canonical_name(factor)?;
    table.categorical(&factor_name)?;
    table
        .schema()
        .benchmark_names()
        .into_iter()
        .map(|bench| grouped_test(table, &factor_name, &bench, options))
        .collect()
}

pub fn grouped_test(
    table: &AnalysisTable,
    factor: &str,
    benchmark: &str,
    options: GroupedTestOptions,
) -> Result<GroupedTestReport> {
    let mut groups = group_values(table, factor, benchmark)?;
    let dropped_levels: Vec<String> =
        groups.iter().filter(|(_, v)| v.len() < 2).map(|(k, _)| k.clone()).collect();
    groups.retain(|_, v| v.len() >= 2);
    if groups.len() < 2 {
        return Err(AnovaError::TooFewLevels { factor: factor.to_string(), benchmark: benchmark.to_string() });
    }
    let d = decompose(&groups)?;
    let anova = anova_from(&d);
    let run_tukey = options.force_tukey || anova.p.is_significant(options.alpha);
    let comparisons = if run_tukey { tukey_from(&d, options.alpha)? } else { Vec::new() };
    Ok(GroupedTestReport {
        factor: factor.to_string(),
        benchmark: benchmark.to_string(),
        anova,
        comparisons,
        alpha: options.alpha,
        dropped_levels,
        tukey_forced: options.force_tukey,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairFrequency {
    pub level_a: String,
    pub level_b: String,
    /// Number of benchmarks in which the pair differs significantly.
    pub count: usize,
    pub benchmarks: Vec<String>,
}

/// Counts significant pairs across reports; sorted by count descending, then by pair.
pub fn pair_frequencies(reports: &[GroupedTestReport]) -> Vec<PairFrequency> {
    let mut map: BTreeMap<(String, String), Vec<String>> = BTreeMap::new();
    for r in reports {
        for c in r.comparisons.iter().filter(|c| c.significant) {
            let key = if c.level_a <= c.level_b {
                (c.level_a.clone(), c.level_b.clone())
            } else {
                (c.level_b.clone(), c.level_a.clone())
            };
            map.entry(key).or_default().push(r.benchmark.clone());
        }
    }
    let mut out: Vec<PairFrequency> = map
        .into_iter()
        .map(|((a, b), benchmarks)| PairFrequency { level_a: a, level_b: b, count: benchmarks.len(), benchmarks })
        .collect();
    out.sort_by(|x, y| y.count.cmp(&x.count).then_with(|| (&x.level_a, &x.level_b).cmp(&(&y.level_a, &y.level_b))));
    out
}

fn fmt_num(v: f64) -> String {
    format!("{v:.10}")
}

/// `benchmark,level_a,level_b,mean_diff,se,q,p_adj,ci_low,ci_high,significant`
pub fn comparisons_csv(reports: &[GroupedTestReport]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["benchmark", "level_a", "level_b", "mean_diff", "se", "q", "p_adj", "ci_low", "ci_high", "significant"])
        .expect("in-memory write");
    for r in reports {
        for c in &r.comparisons {
            w.write_record([
                r.benchmark.clone(),
                c.level_a.clone(),
                c.level_b.clone(),
                fmt_num(c.mean_diff),
                fmt_num(c.se),
                fmt_num(c.q_stat),
                fmt_num(c.p_adj.value()),
                fmt_num(c.ci_low),
                fmt_num(c.ci_high),
                c.significant.to_string(),
            ])
            .expect("in-memory write");
        }
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv output is utf-8")
}

/// `factor,benchmark,k,n,df_between,df_within,ss_between,ss_within,f,p,significant,dropped_levels`
pub fn anova_summary_csv(reports: &[GroupedTestReport]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "factor", "benchmark", "k", "n", "df_between", "df_within", "ss_between", "ss_within", "f", "p", "significant",
        "dropped_levels",
    ])
    .expect("in-memory write");
    for r in reports {
        let a = &r.anova;
        w.write_record([
            r.factor.clone(),
            r.benchmark.clone(),
            a.group_sizes.len().to_string(),
            a.group_sizes.values().sum::<usize>().to_string(),
            a.df_between.to_string(),
            a.df_within.to_string(),
            fmt_num(a.ss_between),
            fmt_num(a.ss_within),
            fmt_num(a.f_stat),
            fmt_num(a.p.value()),
            a.p.is_significant(r.alpha).to_string(),
            r.dropped_levels.join(";"),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv output is utf-8")
}
