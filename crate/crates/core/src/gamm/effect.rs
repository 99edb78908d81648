use serde::{Deserialize, Serialize};

use super::fit::GammFit;
use super::{GammError, Result};

pub use crate::data::DEFAULT_FRACTIONS as QUANTILE_FRACTIONS;

/// Normal quantile for pointwise 95% intervals.
const Z95: f64 = 1.96;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartialEffect {
    pub term_id: String,
    pub variable: String,
    pub by_level: Option<String>,
    pub grid: Vec<f64>,
    pub estimate: Vec<f64>,
    pub ci_low: Vec<f64>,
    pub ci_high: Vec<f64>,
    /// (fraction, x) at the training-data quantiles.
    pub quantile_marks: Vec<(f64, f64)>,
}

impl PartialEffect {
    /// `x,estimate,ci_low,ci_high`
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,estimate,ci_low,ci_high\n");
        for i in 0..self.grid.len() {
            out.push_str(&format!(
                "{:.10},{:.10},{:.10},{:.10}\n",
                self.grid[i], self.estimate[i], self.ci_low[i], self.ci_high[i]
            ));
        }
        out
    }

    /// `fraction,x`
    pub fn marks_csv(&self) -> String {
        let mut out = String::from("fraction,x\n");
        for (f, x) in &self.quantile_marks {
            out.push_str(&format!("{f:.2},{x:.10}\n"));
        }
        out
    }

    pub fn ci_width(&self, i: usize) -> f64 {
        self.ci_high[i] - self.ci_low[i]
    }
}

/// Curve of a smooth term over `grid_size` evenly spaced points of its training range.
pub fn partial_effect(fit: &GammFit, term_id: &str, grid_size: usize) -> Result<PartialEffect> {
    let term = fit.term(term_id)?;
    let (lo, hi) = term.x_range.ok_or_else(|| GammError::NotSmooth(term_id.to_string()))?;
    let m = grid_size.max(2);
    let grid: Vec<f64> = (0..m).map(|i| lo + (hi - lo) * i as f64 / (m - 1) as f64).collect();
    partial_effect_at(fit, term_id, &grid)
}

/// Curve of a smooth term at arbitrary x values.
pub fn partial_effect_at(fit: &GammFit, term_id: &str, xs: &[f64]) -> Result<PartialEffect> {
    let term = fit.term(term_id)?;
    let spline = term.spline.as_ref().ok_or_else(|| GammError::NotSmooth(term_id.to_string()))?;
    let (off, m) = (term.column_offset, term.n_columns);
    let xg = spline.design(xs);
    let beta = nalgebra::DVector::from_column_slice(&fit.coefficients[off..off + m]);
    let v = fit.covariance.view((off, off), (m, m));
    let estimate: Vec<f64> = (&xg * &beta).iter().copied().collect();
    let xv = &xg * v;
    let mut ci_low = Vec::with_capacity(xs.len());
    let mut ci_high = Vec::with_capacity(xs.len());
    for (i, est) in estimate.iter().enumerate() {
        let var = xv.row(i).dot(&xg.row(i)).max(0.0);
        let half = Z95 * var.sqrt();
        ci_low.push(est - half);
        ci_high.push(est + half);
    }
    Ok(PartialEffect {
        term_id: term.id.clone(),
        variable: term.variable.clone(),
        by_level: term.by_level.clone(),
        grid: xs.to_vec(),
        estimate,
        ci_low,
        ci_high,
        quantile_marks: term.quantile_marks.clone(),
    })
}

/// One curve per smooth term (one per level for by-smooths), in term order.
pub fn partial_effects(fit: &GammFit, grid_size: usize) -> Vec<PartialEffect> {
    fit.terms
        .iter()
        .filter(|t| t.is_smooth())
        .map(|t| partial_effect(fit, &t.id, grid_size).expect("smooth terms have curves"))
        .collect()
}
