use serde::{Deserialize, Serialize};

use super::{PipelineError, Result};
use crate::data::AnalysisTable;

/// Pairwise-complete Pearson correlations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    pub columns: Vec<String>,
    pub r: Vec<Vec<f64>>,
    /// Complete observations behind each entry.
    pub n: Vec<Vec<usize>>,
}

impl CorrelationMatrix {
    pub fn get(&self, a: &str, b: &str) -> Option<f64> {
        let i = self.columns.iter().position(|c| c == a)?;
        let j = self.columns.iter().position(|c| c == b)?;
        Some(self.r[i][j])
    }

    /// Mean |r| of each column against all the others.
    pub fn mean_abs_offdiag(&self) -> Vec<(String, f64)> {
        let k = self.columns.len();
        self.columns
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let s: f64 = (0..k).filter(|&j| j != i).map(|j| self.r[i][j].abs()).sum();
                (c.clone(), s / (k - 1) as f64)
            })
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("column");
        for c in &self.columns {
            out.push(',');
            out.push_str(c);
        }
        out.push('\n');
        for (i, c) in self.columns.iter().enumerate() {
            out.push_str(c);
            for v in &self.r[i] {
                out.push_str(&format!(",{v:.10}"));
            }
            out.push('\n');
        }
        out
    }
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return f64::NAN;
    }
    (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0)
}

pub fn correlation_matrix(table: &AnalysisTable, columns: &[&str]) -> Result<CorrelationMatrix> {
    if columns.len() < 2 {
        return Err(PipelineError::Config("correlations need at least 2 columns".into()));
    }
    let mut names = Vec::with_capacity(columns.len());
    let mut data = Vec::with_capacity(columns.len());
    for c in columns {
        names.push(table.canonical_name(c)?);
        data.push(table.numeric(c)?);
    }
    let k = columns.len();
    let mut r = vec![vec![1.0; k]; k];
    let mut n = vec![vec![0usize; k]; k];
    for i in 0..k {
        n[i][i] = data[i].iter().flatten().count();
        for j in (i + 1)..k {
            let (x, y): (Vec<f64>, Vec<f64>) = data[i]
                .iter()
                .zip(&data[j])
                .filter_map(|(a, b)| Some(((*a)?, (*b)?)))
                .unzip();
            if x.len() < 3 {
                return Err(PipelineError::InsufficientOverlap(names[i].clone(), names[j].clone()));
            }
            let v = pearson(&x, &y);
            if !v.is_finite() {
                return Err(PipelineError::InsufficientOverlap(names[i].clone(), names[j].clone()));
            }
            r[i][j] = v;
            r[j][i] = v;
            n[i][j] = x.len();
            n[j][i] = x.len();
        }
    }
    Ok(CorrelationMatrix { columns: names, r, n })
}
