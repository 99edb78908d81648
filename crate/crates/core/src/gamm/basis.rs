//! Cubic regression spline and random-effect bases.
//!
//! The spline is parameterized by its values at the knots. With knot spacings
//! `h`, the second derivatives at the knots are `F β` where
//! `F = [0; B⁻¹D; 0]`, and `∫ f''(x)² dx = β' D'B⁻¹D β`.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::{GammError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct BasisBlock {
    pub term_id: String,
    /// n × m design block.
    pub design_columns: DMatrix<f64>,
    /// m × m symmetric PSD penalty.
    pub penalty: DMatrix<f64>,
    pub null_space_dim: usize,
    pub column_offset: usize,
}

/// Cubic regression spline with a sum-to-zero constraint absorbed by a Householder reflection.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CubicSpline {
    pub knots: Vec<f64>,
    /// k × k map from knot values to knot second derivatives.
    #[serde(skip)]
    f_matrix: DMatrix<f64>,
    /// Householder vector `v` of the centering reflection `I − 2vv'/v'v`.
    householder: Vec<f64>,
}

impl CubicSpline {
    /// Knots at `k` evenly spaced quantiles of the distinct values.
    pub fn with_quantile_knots(x: &[f64], k: usize) -> Result<Self> {
        let knots = quantile_knots(x, k)?;
        Ok(Self::from_knots(knots))
    }

    fn from_knots(knots: Vec<f64>) -> Self {
        let k = knots.len();
        let (d, b) = d_and_b(&knots);
        let binv_d = b.cholesky().expect("B is diagonally dominant").solve(&d);
        let mut f_matrix = DMatrix::zeros(k, k);
        f_matrix.view_mut((1, 0), (k - 2, k)).copy_from(&binv_d);
        Self { knots, f_matrix, householder: Vec::new() }
    }

    pub fn k(&self) -> usize {
        self.knots.len()
    }

    /// Raw (uncentered) penalty `D'B⁻¹D`.
    pub fn raw_penalty(&self) -> DMatrix<f64> {
        let (d, b) = d_and_b(&self.knots);
        let binv_d = b.cholesky().expect("B is diagonally dominant").solve(&d);
        let s = d.transpose() * binv_d;
        symmetrize(&s)
    }

    /// Raw basis row at `x`; linear extrapolation outside the knot range.
    pub fn raw_row(&self, x: f64) -> Vec<f64> {
        let kn = &self.knots;
        let k = kn.len();
        let mut row = vec![0.0; k];
        let f = &self.f_matrix;
        let add_f = |row: &mut Vec<f64>, knot: usize, coef: f64| {
            if coef != 0.0 {
                for c in 0..k {
                    row[c] += coef * f[(knot, c)];
                }
            }
        };
        if x < kn[0] {
            let h = kn[1] - kn[0];
            let dx = x - kn[0];
            // f(x1) + dx f'(x1), f'(x1) = (β2 − β1)/h − h δ2 / 6
            row[0] += 1.0 - dx / h;
            row[1] += dx / h;
            add_f(&mut row, 1, -dx * h / 6.0);
            return row;
        }
        if x > kn[k - 1] {
            let h = kn[k - 1] - kn[k - 2];
            let dx = x - kn[k - 1];
            // f(xk) + dx f'(xk), f'(xk) = (βk − βk−1)/h + h δk−1 / 6
            row[k - 1] += 1.0 + dx / h;
            row[k - 2] -= dx / h;
            add_f(&mut row, k - 2, dx * h / 6.0);
            return row;
        }
        let j = match kn.partition_point(|&t| t <= x) {
            0 => 0,
            p => (p - 1).min(k - 2),
        };
        let h = kn[j + 1] - kn[j];
        let am = (kn[j + 1] - x) / h;
        let ap = (x - kn[j]) / h;
        let cm = ((kn[j + 1] - x).powi(3) / h - h * (kn[j + 1] - x)) / 6.0;
        let cp = ((x - kn[j]).powi(3) / h - h * (x - kn[j])) / 6.0;
        row[j] += am;
        row[j + 1] += ap;
        add_f(&mut row, j, cm);
        add_f(&mut row, j + 1, cp);
        row
    }

    pub fn raw_design(&self, x: &[f64]) -> DMatrix<f64> {
        let k = self.k();
        let mut m = DMatrix::zeros(x.len(), k);
        for (i, &xi) in x.iter().enumerate() {
            for (c, v) in self.raw_row(xi).into_iter().enumerate() {
                m[(i, c)] = v;
            }
        }
        m
    }

    /// Sets the centering so that `Σ w_i f(x_i) = 0` over the given rows.
    pub fn center_on(&mut self, x: &[f64], w: &[f64]) {
        let raw = self.raw_design(x);
        let mut c = vec![0.0; self.k()];
        for (i, wi) in w.iter().enumerate() {
            for (j, cj) in c.iter_mut().enumerate() {
                *cj += wi * raw[(i, j)];
            }
        }
        let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
        let sign = if c[0] >= 0.0 { 1.0 } else { -1.0 };
        c[0] += sign * norm;
        self.householder = c;
    }

    /// Applies `Z` (the last k−1 columns of the reflection) on the right of a k-column matrix.
    fn apply_z(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let k = self.k();
        let v = DVector::from_column_slice(&self.householder);
        let vv = v.dot(&v);
        let reflected = if vv > 0.0 { m - (m * &v) * (v.transpose() * (2.0 / vv)) } else { m.clone() };
        reflected.columns(1, k - 1).into_owned()
    }

    /// Centered design rows (n × (k−1)).
    pub fn design(&self, x: &[f64]) -> DMatrix<f64> {
        self.apply_z(&self.raw_design(x))
    }

    /// Centered penalty `Z'SZ` ((k−1) × (k−1)).
    pub fn penalty(&self) -> DMatrix<f64> {
        let zs = self.apply_z(&self.raw_penalty());
        let zsz = self.apply_z(&zs.transpose());
        symmetrize(&zsz)
    }
}

fn d_and_b(knots: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
    let k = knots.len();
    let h: Vec<f64> = knots.windows(2).map(|w| w[1] - w[0]).collect();
    let mut d = DMatrix::zeros(k - 2, k);
    let mut b = DMatrix::zeros(k - 2, k - 2);
    for i in 0..k - 2 {
        d[(i, i)] = 1.0 / h[i];
        d[(i, i + 1)] = -1.0 / h[i] - 1.0 / h[i + 1];
        d[(i, i + 2)] = 1.0 / h[i + 1];
        b[(i, i)] = (h[i] + h[i + 1]) / 3.0;
        if i + 1 < k - 2 {
            b[(i, i + 1)] = h[i + 1] / 6.0;
            b[(i + 1, i)] = h[i + 1] / 6.0;
        }
    }
    (d, b)
}

pub(crate) fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn distinct_sorted(x: &[f64]) -> Vec<f64> {
    let mut u = x.to_vec();
    u.sort_by(|a, b| a.total_cmp(b));
    u.dedup();
    u
}

fn quantile_knots(x: &[f64], k: usize) -> Result<Vec<f64>> {
    if k < 4 {
        return Err(GammError::InvalidBasis(format!("k = {k} is below the minimum of 4")));
    }
    if let Some(bad) = x.iter().find(|v| !v.is_finite()) {
        return Err(GammError::InvalidBasis(format!("non-finite covariate value {bad}")));
    }
    let u = distinct_sorted(x);
    if u.len() < k {
        return Err(GammError::TooFewDistinctValues { distinct: u.len(), k });
    }
    let m = u.len() - 1;
    Ok((0..k)
        .map(|i| {
            if i == k - 1 {
                return u[m];
            }
            let pos = i as f64 * m as f64 / (k - 1) as f64;
            let lo = pos.floor() as usize;
            u[lo] + (pos - lo as f64) * (u[(lo + 1).min(m)] - u[lo])
        })
        .collect())
}

/// Centered cubic regression spline block with unit weights.
pub fn build_smooth_basis(column: &[f64], k: usize) -> Result<BasisBlock> {
    let w = vec![1.0; column.len()];
    let (_, block) = smooth_block("s(x)", column, &w, k)?;
    Ok(block)
}

pub(crate) fn smooth_block(term_id: &str, x: &[f64], w: &[f64], k: usize) -> Result<(CubicSpline, BasisBlock)> {
    let mut spline = CubicSpline::with_quantile_knots(x, k)?;
    spline.center_on(x, w);
    let block = BasisBlock {
        term_id: term_id.to_string(),
        design_columns: spline.design(x),
        penalty: spline.penalty(),
        null_space_dim: 1,
        column_offset: 0,
    };
    Ok((spline, block))
}

/// Sorted distinct levels of a factor column.
pub fn factor_levels(column: &[String]) -> Vec<String> {
    let mut levels: Vec<String> = column.to_vec();
    levels.sort();
    levels.dedup();
    levels
}

/// One indicator column per level with an identity penalty.
pub fn build_re_block(column: &[String]) -> Result<BasisBlock> {
    let levels = factor_levels(column);
    re_block("re", column, &levels)
}

pub(crate) fn re_block(term_id: &str, column: &[String], levels: &[String]) -> Result<BasisBlock> {
    if levels.len() < 2 {
        return Err(GammError::DegenerateFactor(format!(
            "`{term_id}` needs at least 2 levels, found {}",
            levels.len()
        )));
    }
    Ok(BasisBlock {
        term_id: term_id.to_string(),
        design_columns: indicator_matrix(column, levels),
        penalty: DMatrix::identity(levels.len(), levels.len()),
        null_space_dim: 0,
        column_offset: 0,
    })
}

pub(crate) fn indicator_matrix(column: &[String], levels: &[String]) -> DMatrix<f64> {
    let index: BTreeMap<&str, usize> = levels.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
    let mut m = DMatrix::zeros(column.len(), levels.len());
    for (r, v) in column.iter().enumerate() {
        if let Some(&c) = index.get(v.as_str()) {
            m[(r, c)] = 1.0;
        }
    }
    m
}
