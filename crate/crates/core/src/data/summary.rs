use serde::{Deserialize, Serialize};

use super::{AnalysisTable, DataError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub n: usize,
    pub mean: f64,
    pub median: f64,
    /// Sample standard deviation (n − 1 denominator); 0 for a single value.
    pub sd: f64,
    pub min: f64,
    pub max: f64,
    /// (fraction, value) pairs in increasing fraction order.
    pub quantiles: Vec<(f64, f64)>,
}

/// Linear-interpolation quantile of already sorted data.
pub fn quantile_sorted(sorted: &[f64], fraction: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let pos = fraction.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn summarize(values: &[f64], fractions: &[f64]) -> Option<SummaryStats> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let n = sorted.len();
    let mean = sorted.iter().sum::<f64>() / n as f64;
    let sd = if n > 1 {
        (sorted.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    let mut fr: Vec<f64> = fractions.iter().copied().filter(|f| (0.0..=1.0).contains(f)).collect();
    fr.sort_by(|a, b| a.total_cmp(b));
    fr.dedup();
    Some(SummaryStats {
        n,
        mean,
        median: quantile_sorted(&sorted, 0.5),
        sd,
        min: sorted[0],
        max: sorted[n - 1],
        quantiles: fr.into_iter().map(|f| (f, quantile_sorted(&sorted, f))).collect(),
    })
}

pub const DEFAULT_FRACTIONS: [f64; 6] = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0];

pub fn summary_stats(table: &AnalysisTable, column: &str, fractions: &[f64]) -> Result<SummaryStats> {
    let values: Vec<f64> = table.numeric(column)?.into_iter().flatten().collect();
    summarize(&values, fractions).ok_or_else(|| DataError::EmptyColumn(column.to_string()))
}
