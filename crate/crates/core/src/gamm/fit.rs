//! Penalized least squares with REML smoothing-parameter selection.
//!
//! For smoothing parameters `λ` the coefficients minimize
//! `‖W^{1/2}(y − Xβ)‖² + Σ λ_j β'S_jβ`. With `ρ_j = ln λ_j`, `A = X'WX + S_λ`,
//! `D_p` the penalized residual sum of squares at the optimum, `n` the summed
//! weights and `M_p` the unpenalized dimension, the profiled REML criterion is
//!
//! ```text
//! V(ρ) = (n − M_p)(1 + ln(2π D_p / (n − M_p))) + ln|A| − ln|S_λ|₊
//! ∂V/∂ρ_j = (n − M_p) λ_j β'S_jβ / D_p + λ_j tr(A⁻¹S_j) − rank(S_j)
//! ```
//!
//! Penalties are block diagonal, so `ln|S_λ|₊ = Σ rank(S_j) ln λ_j + ln|S_j|₊`.

use std::collections::BTreeMap;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize, Serializer};

use super::basis::{factor_levels, indicator_matrix, smooth_block, symmetrize, CubicSpline};
use super::formula::{Formula, TermKind};
use super::{GammError, Result};
use crate::data::{quantile_sorted, AnalysisTable, DataError, DEFAULT_FRACTIONS};
use crate::dist::{f_sf, PValue};

const JITTERS: [f64; 5] = [1e-10, 1e-9, 1e-8, 1e-7, 1e-6];
const GRID_POINTS: usize = 17;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitOptions {
    /// Smoothing parameters on the raw penalty scale, one per penalized term; skips REML.
    pub fixed_lambda: Option<Vec<f64>>,
    /// Search range for log10 λ relative to the normalized penalties.
    pub log10_lambda_range: (f64, f64),
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { fixed_lambda: None, log10_lambda_range: (-8.0, 8.0) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DroppedRecord {
    pub index: usize,
    pub model: String,
    pub missing: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FittedTerm {
    pub id: String,
    pub kind: TermKind,
    pub variable: String,
    pub by_factor: Option<String>,
    pub by_level: Option<String>,
    pub column_offset: usize,
    pub n_columns: usize,
    /// Parametric factor: all levels, reference first. Random effect: one per column.
    /// Smooth-by: every training level of the by factor.
    pub levels: Vec<String>,
    pub k: Option<usize>,
    pub spline: Option<CubicSpline>,
    pub x_range: Option<(f64, f64)>,
    pub quantile_marks: Vec<(f64, f64)>,
    pub penalty_index: Option<usize>,
}

impl FittedTerm {
    pub fn is_smooth(&self) -> bool {
        matches!(self.kind, TermKind::Smooth | TermKind::SmoothBy)
    }
}

struct Penalty {
    term: usize,
    offset: usize,
    size: usize,
    /// Normalized penalty.
    s: DMatrix<f64>,
    /// λ_raw = λ_normalized · scale
    scale: f64,
    rank: usize,
    log_det: f64,
}

/// Design, response and penalties ready for REML evaluation.
pub struct PreparedFit {
    formula: Formula,
    x: DMatrix<f64>,
    y: DVector<f64>,
    w: DVector<f64>,
    xtwx: DMatrix<f64>,
    xtwy: DVector<f64>,
    penalties: Vec<Penalty>,
    terms: Vec<FittedTerm>,
    coef_names: Vec<String>,
    rows: Vec<usize>,
    dropped: Vec<DroppedRecord>,
    notes: Vec<String>,
    n_eff: f64,
    m_p: usize,
    dp_floor: f64,
}

enum Values {
    Numeric(Vec<Option<f64>>),
    Factor(Vec<Option<String>>),
}

fn term_needs_factor(kind: TermKind) -> bool {
    matches!(kind, TermKind::ParametricFactor | TermKind::RandomEffect)
}

fn load_columns(formula: &Formula, table: &AnalysisTable) -> Result<BTreeMap<String, Values>> {
    let mut cols = BTreeMap::new();
    cols.insert(formula.response.clone(), Values::Numeric(table.numeric(&formula.response)?));
    for t in &formula.terms {
        if !cols.contains_key(&t.variable) {
            let v = if term_needs_factor(t.kind) {
                Values::Factor(table.categorical(&t.variable)?)
            } else {
                Values::Numeric(table.numeric(&t.variable)?)
            };
            cols.insert(t.variable.clone(), v);
        }
        if let Some(by) = &t.by_factor {
            if !cols.contains_key(by) {
                cols.insert(by.clone(), Values::Factor(table.categorical(by)?));
            }
        }
    }
    // a name used both as a smooth covariate and a factor is a user error
    for t in &formula.terms {
        let is_factor = matches!(cols.get(&t.variable), Some(Values::Factor(_)));
        if term_needs_factor(t.kind) != is_factor {
            return Err(if is_factor {
                DataError::NotNumeric(t.variable.clone()).into()
            } else {
                DataError::NotCategorical(t.variable.clone()).into()
            });
        }
    }
    Ok(cols)
}

fn numeric<'a>(cols: &'a BTreeMap<String, Values>, name: &str) -> &'a [Option<f64>] {
    match &cols[name] {
        Values::Numeric(v) => v,
        Values::Factor(_) => unreachable!("checked by load_columns"),
    }
}

fn factor<'a>(cols: &'a BTreeMap<String, Values>, name: &str) -> &'a [Option<String>] {
    match &cols[name] {
        Values::Factor(v) => v,
        Values::Numeric(_) => unreachable!("checked by load_columns"),
    }
}

fn validate_weights(weights: Option<&[f64]>, n: usize) -> Result<Vec<f64>> {
    match weights {
        None => Ok(vec![1.0; n]),
        Some(w) => {
            if w.len() != n {
                return Err(DataError::LengthMismatch { expected: n, got: w.len() }.into());
            }
            if let Some(bad) = w.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
                return Err(DataError::InvalidWeight(*bad).into());
            }
            Ok(w.to_vec())
        }
    }
}

fn marks(x: &[f64]) -> Vec<(f64, f64)> {
    let mut s = x.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    DEFAULT_FRACTIONS.iter().map(|&f| (f, quantile_sorted(&s, f))).collect()
}

fn frobenius(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn weighted_gram(x: &DMatrix<f64>, w: &DVector<f64>) -> DMatrix<f64> {
    let mut xw = x.clone();
    for (i, wi) in w.iter().enumerate() {
        xw.row_mut(i).scale_mut(*wi);
    }
    symmetrize(&(x.transpose() * xw))
}

pub fn prepare_fit(formula: &Formula, table: &AnalysisTable, weights: Option<&[f64]>) -> Result<PreparedFit> {
    let cols = load_columns(formula, table)?;
    let all_w = validate_weights(weights, table.len())?;

    let mut rows = Vec::new();
    let mut dropped = Vec::new();
    for i in 0..table.len() {
        let missing: Vec<String> = cols
            .iter()
            .filter(|(_, v)| match v {
                Values::Numeric(c) => c[i].is_none(),
                Values::Factor(c) => c[i].is_none(),
            })
            .map(|(k, _)| k.clone())
            .collect();
        if missing.is_empty() {
            rows.push(i);
        } else {
            dropped.push(DroppedRecord { index: i, model: table.records()[i].name.clone(), missing });
        }
    }
    let n = rows.len();
    let take_num = |name: &str| -> Vec<f64> { rows.iter().map(|&i| numeric(&cols, name)[i].unwrap()).collect() };
    let take_fac =
        |name: &str| -> Vec<String> { rows.iter().map(|&i| factor(&cols, name)[i].clone().unwrap()).collect() };
    let y = DVector::from_vec(take_num(&formula.response));
    let w_vec: Vec<f64> = rows.iter().map(|&i| all_w[i]).collect();

    let mut blocks: Vec<DMatrix<f64>> = vec![DMatrix::from_element(n, 1, 1.0)];
    let mut coef_names = vec!["(Intercept)".to_string()];
    let mut terms: Vec<FittedTerm> = Vec::new();
    let mut raw_penalties: Vec<(usize, DMatrix<f64>, usize)> = Vec::new();
    let mut notes = Vec::new();
    let mut offset = 1;

    let mut push_term = |term: FittedTerm,
                         design: DMatrix<f64>,
                         penalty: Option<(DMatrix<f64>, usize)>,
                         names: Vec<String>,
                         blocks: &mut Vec<DMatrix<f64>>,
                         terms: &mut Vec<FittedTerm>| {
        let mut term = term;
        term.column_offset = offset;
        term.n_columns = design.ncols();
        if let Some((s, rank)) = penalty {
            term.penalty_index = Some(raw_penalties.len());
            raw_penalties.push((terms.len(), s, rank));
        }
        offset += design.ncols();
        blocks.push(design);
        coef_names.extend(names);
        terms.push(term);
    };

    let empty_term = |id: String, kind: TermKind, variable: &str| FittedTerm {
        id,
        kind,
        variable: variable.to_string(),
        by_factor: None,
        by_level: None,
        column_offset: 0,
        n_columns: 0,
        levels: Vec::new(),
        k: None,
        spline: None,
        x_range: None,
        quantile_marks: Vec::new(),
        penalty_index: None,
    };

    for spec in &formula.terms {
        let label = spec.label();
        match spec.kind {
            TermKind::Smooth => {
                let x = take_num(&spec.variable);
                let k = spec.k.unwrap_or(super::DEFAULT_K);
                let (spline, block) = smooth_block(&label, &x, &w_vec, k)?;
                let mut t = empty_term(label.clone(), spec.kind, &spec.variable);
                t.k = Some(k);
                t.x_range = Some(range(&x));
                t.quantile_marks = marks(&x);
                t.spline = Some(spline);
                let names = (1..=block.design_columns.ncols()).map(|c| format!("{label}.{c}")).collect();
                push_term(t, block.design_columns, Some((block.penalty, k - 2)), names, &mut blocks, &mut terms);
            }
            TermKind::SmoothBy => {
                let by = spec.by_factor.as_deref().unwrap_or_default();
                let x = take_num(&spec.variable);
                let f = take_fac(by);
                let levels = factor_levels(&f);
                for level in &levels {
                    let idx: Vec<usize> = (0..n).filter(|&i| &f[i] == level).collect();
                    let xl: Vec<f64> = idx.iter().map(|&i| x[i]).collect();
                    let wl: Vec<f64> = idx.iter().map(|&i| w_vec[i]).collect();
                    let distinct = super::distinct_sorted(&xl).len();
                    if distinct < 4 {
                        notes.push(format!(
                            "{label}: level `{level}` skipped ({distinct} distinct values of {})",
                            spec.variable
                        ));
                        continue;
                    }
                    let k = spec.k.unwrap_or(super::DEFAULT_K).min(distinct);
                    if k < spec.k.unwrap_or(super::DEFAULT_K) {
                        notes.push(format!("{label}: level `{level}` uses k = {k}"));
                    }
                    let id = format!("s({}):{by}={level}", spec.variable);
                    let (spline, block) = smooth_block(&id, &xl, &wl, k)?;
                    let mut design = DMatrix::zeros(n, block.design_columns.ncols());
                    for (r, &i) in idx.iter().enumerate() {
                        design.row_mut(i).copy_from(&block.design_columns.row(r));
                    }
                    let mut t = empty_term(id.clone(), spec.kind, &spec.variable);
                    t.by_factor = Some(by.to_string());
                    t.by_level = Some(level.clone());
                    t.levels = levels.clone();
                    t.k = Some(k);
                    t.x_range = Some(range(&xl));
                    t.quantile_marks = marks(&xl);
                    t.spline = Some(spline);
                    let names = (1..=design.ncols()).map(|c| format!("{id}.{c}")).collect();
                    push_term(t, design, Some((block.penalty, k - 2)), names, &mut blocks, &mut terms);
                }
            }
            TermKind::ParametricFactor => {
                let f = take_fac(&spec.variable);
                let levels = factor_levels(&f);
                if levels.len() < 2 {
                    return Err(GammError::DegenerateFactor(format!(
                        "`{}` has {} level(s) among the usable records",
                        spec.variable,
                        levels.len()
                    )));
                }
                let design = indicator_matrix(&f, &levels[1..]);
                let names = levels[1..].iter().map(|l| format!("{}[{l}]", spec.variable)).collect();
                let mut t = empty_term(label, spec.kind, &spec.variable);
                t.levels = levels;
                push_term(t, design, None, names, &mut blocks, &mut terms);
            }
            TermKind::RandomEffect => {
                let f = take_fac(&spec.variable);
                let levels = factor_levels(&f);
                let block = super::basis::re_block(&label, &f, &levels)?;
                let names = levels.iter().map(|l| format!("{label}[{l}]")).collect();
                let mut t = empty_term(label, spec.kind, &spec.variable);
                t.levels = levels.clone();
                push_term(t, block.design_columns, Some((block.penalty, levels.len())), names, &mut blocks, &mut terms);
            }
        }
    }

    let p = offset;
    if n < p + 5 {
        return Err(GammError::NotEnoughData { n, required: p + 5 });
    }
    let mut x = DMatrix::zeros(n, p);
    let mut c = 0;
    for b in &blocks {
        x.view_mut((0, c), (n, b.ncols())).copy_from(b);
        c += b.ncols();
    }
    let w = DVector::from_vec(w_vec);
    let xtwx = weighted_gram(&x, &w);
    let xtwy = x.transpose() * y.component_mul(&w);

    let mut penalties = Vec::new();
    for (term, s_raw, rank) in raw_penalties {
        let t = &terms[term];
        let (off, size) = (t.column_offset, t.n_columns);
        let gram = xtwx.view((off, off), (size, size)).into_owned();
        let s_norm = frobenius(&s_raw);
        let scale = if s_norm > 0.0 && frobenius(&gram) > 0.0 { frobenius(&gram) / s_norm } else { 1.0 };
        let s = &s_raw * scale;
        let eig = s.clone().symmetric_eigen();
        let mut ev: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        ev.sort_by(|a, b| b.total_cmp(a));
        let log_det = ev.iter().take(rank).map(|v| v.max(f64::MIN_POSITIVE).ln()).sum();
        penalties.push(Penalty { term, offset: off, size, s, scale, rank, log_det });
    }
    let m_p = p - penalties.iter().map(|q| q.rank).sum::<usize>();
    let n_eff = w.sum();
    if n_eff <= m_p as f64 {
        return Err(GammError::NotEnoughData { n, required: m_p + 1 });
    }
    let ywy = y.component_mul(&w).dot(&y);
    Ok(PreparedFit {
        formula: formula.clone(),
        x,
        y,
        w,
        xtwx,
        xtwy,
        penalties,
        terms,
        coef_names,
        rows,
        dropped,
        notes,
        n_eff,
        m_p,
        dp_floor: 1e-14 * ywy.max(f64::MIN_POSITIVE),
    })
}

fn range(x: &[f64]) -> (f64, f64) {
    x.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
}

fn cholesky_jittered(a: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    if let Some(c) = Cholesky::new(a.clone()) {
        return Ok(c);
    }
    let n = a.nrows();
    let scale = (a.diagonal().iter().map(|v| v.abs()).sum::<f64>() / n as f64).max(f64::MIN_POSITIVE);
    for j in JITTERS {
        let mut b = a.clone();
        for i in 0..n {
            b[(i, i)] += j * scale;
        }
        if let Some(c) = Cholesky::new(b) {
            return Ok(c);
        }
    }
    Err(GammError::RankDeficient)
}

struct Eval {
    beta: DVector<f64>,
    chol: Cholesky<f64, Dyn>,
    score: f64,
    dp: f64,
    dp_floored: bool,
    rss: f64,
    quad: Vec<f64>,
}

impl PreparedFit {
    pub fn n_penalties(&self) -> usize {
        self.penalties.len()
    }

    /// Term ids of the penalized terms, in λ order.
    pub fn penalized_terms(&self) -> Vec<&str> {
        self.penalties.iter().map(|q| self.terms[q.term].id.as_str()).collect()
    }

    pub fn n_used(&self) -> usize {
        self.rows.len()
    }

    pub fn n_columns(&self) -> usize {
        self.x.ncols()
    }

    fn normalized(&self, lambda_raw: &[f64]) -> Result<Vec<f64>> {
        if lambda_raw.len() != self.penalties.len() {
            return Err(GammError::InvalidLambda(format!(
                "expected {} smoothing parameters, got {}",
                self.penalties.len(),
                lambda_raw.len()
            )));
        }
        lambda_raw
            .iter()
            .zip(&self.penalties)
            .map(|(&l, q)| {
                if l.is_finite() && l > 0.0 {
                    Ok(l / q.scale)
                } else {
                    Err(GammError::InvalidLambda(format!("λ = {l} must be finite and positive")))
                }
            })
            .collect()
    }

    fn evaluate(&self, lam: &[f64]) -> Result<Eval> {
        let mut a = self.xtwx.clone();
        for (q, &l) in self.penalties.iter().zip(lam) {
            let mut view = a.view_mut((q.offset, q.offset), (q.size, q.size));
            view += &q.s * l;
        }
        let chol = cholesky_jittered(&a)?;
        let beta = chol.solve(&self.xtwy);
        let resid = &self.y - &self.x * &beta;
        let rss = resid.component_mul(&self.w).dot(&resid);
        let quad: Vec<f64> = self
            .penalties
            .iter()
            .map(|q| {
                let b = beta.rows(q.offset, q.size);
                (b.transpose() * &q.s * b)[(0, 0)]
            })
            .collect();
        let pen: f64 = quad.iter().zip(lam).map(|(v, l)| v * l).sum();
        let raw_dp = rss + pen;
        let dp_floored = raw_dp <= self.dp_floor;
        let dp = raw_dp.max(self.dp_floor);
        let nm = self.n_eff - self.m_p as f64;
        let log_det_a = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let log_det_s: f64 = self.penalties.iter().zip(lam).map(|(q, l)| q.rank as f64 * l.ln() + q.log_det).sum();
        let score = nm * (1.0 + (2.0 * std::f64::consts::PI * dp / nm).ln()) + log_det_a - log_det_s;
        if !score.is_finite() {
            return Err(GammError::NumericalOverflow);
        }
        Ok(Eval { beta, chol, score, dp, dp_floored, rss, quad })
    }

    fn gradient_from(&self, lam: &[f64], ev: &Eval) -> Vec<f64> {
        let ainv = ev.chol.inverse();
        let nm = self.n_eff - self.m_p as f64;
        self.penalties
            .iter()
            .zip(lam)
            .zip(&ev.quad)
            .map(|((q, &l), &quad)| {
                let block = ainv.view((q.offset, q.offset), (q.size, q.size));
                let tr = block.component_mul(&q.s.transpose()).sum();
                let d_dp = if ev.dp_floored { 0.0 } else { nm * l * quad / ev.dp };
                d_dp + l * tr - q.rank as f64
            })
            .collect()
    }

    fn score_rho(&self, rho: &[f64]) -> f64 {
        let lam: Vec<f64> = rho.iter().map(|r| r.exp()).collect();
        self.evaluate(&lam).map_or(f64::INFINITY, |e| e.score)
    }

    fn gradient_rho(&self, rho: &[f64]) -> Option<Vec<f64>> {
        let lam: Vec<f64> = rho.iter().map(|r| r.exp()).collect();
        let ev = self.evaluate(&lam).ok()?;
        Some(self.gradient_from(&lam, &ev))
    }

    /// Coarse grid then golden-section along coordinate `j`.
    fn line_search(&self, rho: &[f64], j: usize, lo: f64, hi: f64) -> (f64, f64) {
        let mut r = rho.to_vec();
        let mut at = |t: f64| {
            r[j] = t;
            self.score_rho(&r)
        };
        let step = (hi - lo) / (GRID_POINTS - 1) as f64;
        let grid: Vec<(f64, f64)> = (0..GRID_POINTS)
            .map(|i| {
                let t = lo + i as f64 * step;
                (t, at(t))
            })
            .collect();
        let (ib, &(tb, sb)) = grid
            .iter()
            .enumerate()
            .min_by(|a, b| a.1 .1.total_cmp(&b.1 .1))
            .expect("grid is non-empty");
        if !sb.is_finite() {
            return (rho[j], f64::INFINITY);
        }
        let mut a = grid[ib.saturating_sub(1)].0;
        let mut b = grid[(ib + 1).min(GRID_POINTS - 1)].0;
        let g = (5f64.sqrt() - 1.0) / 2.0;
        let mut c = b - g * (b - a);
        let mut d = a + g * (b - a);
        let mut fc = at(c);
        let mut fd = at(d);
        while b - a > 1e-3 {
            if fc < fd {
                b = d;
                d = c;
                fd = fc;
                c = b - g * (b - a);
                fc = at(c);
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + g * (b - a);
                fd = at(d);
            }
        }
        let (tg, sg) = if fc < fd { (c, fc) } else { (d, fd) };
        if sg < sb {
            (tg, sg)
        } else {
            (tb, sb)
        }
    }

    fn optimize(&self, lo: f64, hi: f64) -> Vec<f64> {
        let m = self.penalties.len();
        let mut rho = vec![0f64.clamp(lo, hi); m];
        if m == 0 {
            return rho;
        }
        let mut best = self.score_rho(&rho);
        for _ in 0..50 {
            let start = best;
            for j in 0..m {
                let (t, s) = self.line_search(&rho, j, lo, hi);
                if s < best {
                    rho[j] = t;
                    best = s;
                }
            }
            if !(start - best >= 1e-6) {
                break;
            }
        }
        self.polish(&mut rho, best, lo, hi);
        rho
    }

    /// Refines each coordinate to a root of the analytic gradient so that the
    /// optimum does not depend on the golden-section path.
    fn polish(&self, rho: &mut [f64], mut best: f64, lo: f64, hi: f64) {
        for _ in 0..100 {
            let mut max_step: f64 = 0.0;
            for j in 0..rho.len() {
                let Some(t) = self.coordinate_root(rho, j, lo, hi) else { return };
                let old = rho[j];
                rho[j] = t;
                let s = self.score_rho(rho);
                if s <= best + 1e-9 * (1.0 + best.abs()) {
                    best = best.min(s);
                    max_step = max_step.max((t - old).abs());
                } else {
                    rho[j] = old;
                }
            }
            if max_step < 1e-9 {
                break;
            }
        }
    }

    fn coordinate_root(&self, rho: &[f64], j: usize, lo: f64, hi: f64) -> Option<f64> {
        let mut r = rho.to_vec();
        let mut g = |t: f64| -> Option<f64> {
            r[j] = t;
            self.gradient_rho(&r).map(|v| v[j])
        };
        let x0 = rho[j];
        let g0 = g(x0)?;
        if g0 == 0.0 {
            return Some(x0);
        }
        let dir = -g0.signum();
        let (mut a, mut ga) = (x0, g0);
        let mut step = 0.25;
        let (mut b, mut gb);
        loop {
            b = (a + dir * step).clamp(lo, hi);
            if b == a {
                return Some(a);
            }
            gb = g(b)?;
            if gb.signum() != ga.signum() {
                break;
            }
            if b == lo || b == hi {
                return Some(b);
            }
            a = b;
            ga = gb;
            step *= 2.0;
        }
        // Illinois false position
        let mut side = 0;
        for _ in 0..100 {
            if (b - a).abs() < 1e-12 {
                break;
            }
            let c = (a * gb - b * ga) / (gb - ga);
            let c = if c.is_finite() && (c - a) * (c - b) < 0.0 { c } else { 0.5 * (a + b) };
            let gc = g(c)?;
            if gc == 0.0 {
                return Some(c);
            }
            if gc.signum() == gb.signum() {
                b = c;
                gb = gc;
                if side == -1 {
                    ga *= 0.5;
                }
                side = -1;
            } else {
                a = c;
                ga = gc;
                if side == 1 {
                    gb *= 0.5;
                }
                side = 1;
            }
        }
        Some(if ga.abs() < gb.abs() { a } else { b })
    }
}

/// REML criterion at raw-scale smoothing parameters.
pub fn reml_score(lambda: &[f64], state: &PreparedFit) -> Result<f64> {
    let lam = state.normalized(lambda)?;
    Ok(state.evaluate(&lam)?.score)
}

/// Analytic gradient of the REML criterion with respect to ln λ.
pub fn reml_gradient(lambda: &[f64], state: &PreparedFit) -> Result<Vec<f64>> {
    let lam = state.normalized(lambda)?;
    let ev = state.evaluate(&lam)?;
    Ok(state.gradient_from(&lam, &ev))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermSummary {
    pub term_id: String,
    pub kind: TermKind,
    pub columns: usize,
    pub edf: f64,
    /// Raw-scale smoothing parameter; `None` for unpenalized terms.
    pub lambda: Option<f64>,
    /// Wald statistic divided by its reference rank.
    pub f_stat: f64,
    pub ref_rank: usize,
    pub p_value: PValue,
}

fn serialize_matrix<S: Serializer>(m: &DMatrix<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    let rows: Vec<Vec<f64>> = m.row_iter().map(|r| r.iter().copied().collect()).collect();
    rows.serialize(s)
}

#[derive(Debug, Clone, Serialize)]
pub struct GammFit {
    pub formula: Formula,
    pub formula_text: String,
    pub coefficient_names: Vec<String>,
    pub coefficients: Vec<f64>,
    /// Raw-scale λ per penalized term, in term order.
    pub lambda: Vec<(String, f64)>,
    pub sigma2: f64,
    #[serde(serialize_with = "serialize_matrix")]
    pub covariance: DMatrix<f64>,
    pub terms: Vec<FittedTerm>,
    pub summaries: Vec<TermSummary>,
    pub edf_total: f64,
    pub residual_df: f64,
    pub reml_score: f64,
    pub deviance_explained: f64,
    pub fitted: Vec<f64>,
    /// Table row of each fitted value.
    pub rows: Vec<usize>,
    pub n_used: usize,
    pub n_eff: f64,
    pub dropped_records: Vec<DroppedRecord>,
    pub notes: Vec<String>,
}

/// The parts of a fit that go into reports (no covariance, no per-record vectors).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammReport {
    pub formula: String,
    pub lambda: Vec<(String, f64)>,
    pub sigma2: f64,
    pub edf_total: f64,
    pub residual_df: f64,
    pub reml_score: f64,
    pub deviance_explained: f64,
    pub terms: Vec<TermSummary>,
    pub coefficients: Vec<(String, f64)>,
    pub n_used: usize,
    pub n_eff: f64,
    pub dropped_records: usize,
    pub notes: Vec<String>,
}

impl GammFit {
    pub fn term(&self, term_id: &str) -> Result<&FittedTerm> {
        self.terms
            .iter()
            .find(|t| t.id == term_id)
            .ok_or_else(|| GammError::TermNotFound(term_id.to_string()))
    }

    pub fn summary(&self, term_id: &str) -> Result<&TermSummary> {
        self.summaries
            .iter()
            .find(|t| t.term_id == term_id)
            .ok_or_else(|| GammError::TermNotFound(term_id.to_string()))
    }

    pub fn term_coefficients(&self, term_id: &str) -> Result<&[f64]> {
        let t = self.term(term_id)?;
        Ok(&self.coefficients[t.column_offset..t.column_offset + t.n_columns])
    }

    pub fn intercept(&self) -> f64 {
        self.coefficients[0]
    }

    pub fn report(&self) -> GammReport {
        GammReport {
            formula: self.formula_text.clone(),
            lambda: self.lambda.clone(),
            sigma2: self.sigma2,
            edf_total: self.edf_total,
            residual_df: self.residual_df,
            reml_score: self.reml_score,
            deviance_explained: self.deviance_explained,
            terms: self.summaries.clone(),
            coefficients: self.coefficient_names.iter().cloned().zip(self.coefficients.iter().copied()).collect(),
            n_used: self.n_used,
            n_eff: self.n_eff,
            dropped_records: self.dropped_records.len(),
            notes: self.notes.clone(),
        }
    }
}

pub fn fit_gamm(formula: &Formula, table: &AnalysisTable, weights: Option<&[f64]>) -> Result<GammFit> {
    fit_gamm_with(formula, table, weights, &FitOptions::default())
}

pub fn fit_gamm_with(
    formula: &Formula,
    table: &AnalysisTable,
    weights: Option<&[f64]>,
    options: &FitOptions,
) -> Result<GammFit> {
    let state = prepare_fit(formula, table, weights)?;
    let lam = match &options.fixed_lambda {
        Some(raw) => state.normalized(raw)?,
        None => {
            let (lo, hi) = options.log10_lambda_range;
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(GammError::InvalidLambda(format!("bad log10 range ({lo}, {hi})")));
            }
            let ln10 = std::f64::consts::LN_10;
            state.optimize(lo * ln10, hi * ln10).iter().map(|r| r.exp()).collect()
        }
    };
    finish(state, &lam)
}

fn finish(state: PreparedFit, lam: &[f64]) -> Result<GammFit> {
    let ev = state.evaluate(lam)?;
    let ainv = symmetrize(&ev.chol.inverse());
    let f = &ainv * &state.xtwx;
    let edf_cols: Vec<f64> = f.diagonal().iter().copied().collect();
    let edf_total: f64 = edf_cols.iter().sum();
    let residual_df = state.n_eff - edf_total;
    if residual_df <= 0.0 {
        return Err(GammError::NotEnoughData { n: state.rows.len(), required: edf_total.ceil() as usize + 1 });
    }
    let sigma2 = (ev.rss / residual_df).max(f64::MIN_POSITIVE);
    let covariance = &ainv * sigma2;
    let fitted = &state.x * &ev.beta;
    let wmean = state.y.component_mul(&state.w).sum() / state.n_eff;
    let tss: f64 = state.y.iter().zip(state.w.iter()).map(|(y, w)| w * (y - wmean).powi(2)).sum();
    let deviance_explained = if tss > 0.0 { 1.0 - ev.rss / tss } else { 1.0 };

    let mut summaries = Vec::new();
    let mut lambda = Vec::new();
    for t in &state.terms {
        let (off, m) = (t.column_offset, t.n_columns);
        let edf: f64 = edf_cols[off..off + m].iter().sum();
        let lam_raw = t.penalty_index.map(|i| lam[i] * state.penalties[i].scale);
        if let Some(l) = lam_raw {
            lambda.push((t.id.clone(), l));
        }
        let beta = ev.beta.rows(off, m).into_owned();
        let v = covariance.view((off, off), (m, m)).into_owned();
        let rank = if t.penalty_index.is_some() { (edf.round() as usize).clamp(1, m) } else { m };
        let (f_stat, p) = wald(&beta, &v, rank, residual_df)?;
        summaries.push(TermSummary {
            term_id: t.id.clone(),
            kind: t.kind,
            columns: m,
            edf,
            lambda: lam_raw,
            f_stat,
            ref_rank: rank,
            p_value: p,
        });
    }

    Ok(GammFit {
        formula_text: state.formula.to_string(),
        formula: state.formula,
        coefficient_names: state.coef_names,
        coefficients: ev.beta.iter().copied().collect(),
        lambda,
        sigma2,
        covariance,
        terms: state.terms,
        summaries,
        edf_total,
        residual_df,
        reml_score: ev.score,
        deviance_explained,
        fitted: fitted.iter().copied().collect(),
        n_used: state.rows.len(),
        rows: state.rows,
        n_eff: state.n_eff,
        dropped_records: state.dropped,
        notes: state.notes,
    })
}

/// Wald statistic `β'V⁺β / r` with a rank-`r` eigen pseudo-inverse, against F(r, df2).
fn wald(beta: &DVector<f64>, v: &DMatrix<f64>, rank: usize, df2: f64) -> Result<(f64, PValue)> {
    if beta.iter().all(|b| *b == 0.0) {
        return Ok((0.0, PValue::new(1.0)));
    }
    let eig = symmetrize(v).symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let top = eig.eigenvalues[order[0]];
    let mut stat = 0.0;
    for &i in order.iter().take(rank) {
        let ev = eig.eigenvalues[i];
        if ev > 1e-12 * top && ev > 0.0 {
            stat += eig.eigenvectors.column(i).dot(beta).powi(2) / ev;
        }
    }
    let f_stat = stat / rank as f64;
    let p = f_sf(f_stat, rank as f64, df2)?;
    Ok((f_stat, PValue::new(p)))
}

pub fn smooth_significance(fit: &GammFit, term_id: &str) -> Result<PValue> {
    let s = fit.summary(term_id)?;
    if s.kind == TermKind::ParametricFactor {
        return Err(GammError::NotSmooth(term_id.to_string()));
    }
    Ok(s.p_value)
}

/// Linear predictor for every record of `table`; `None` where a covariate is missing.
pub fn predict(fit: &GammFit, table: &AnalysisTable) -> Result<Vec<Option<f64>>> {
    let mut needed = BTreeMap::new();
    for t in &fit.terms {
        if !needed.contains_key(&t.variable) {
            let v = if term_needs_factor(t.kind) {
                Values::Factor(table.categorical(&t.variable)?)
            } else {
                Values::Numeric(table.numeric(&t.variable)?)
            };
            needed.insert(t.variable.clone(), v);
        }
        if let Some(by) = &t.by_factor {
            if !needed.contains_key(by) {
                needed.insert(by.clone(), Values::Factor(table.categorical(by)?));
            }
        }
    }
    let mut out = Vec::with_capacity(table.len());
    'rows: for i in 0..table.len() {
        let mut eta = fit.intercept();
        for t in &fit.terms {
            let beta = &fit.coefficients[t.column_offset..t.column_offset + t.n_columns];
            match t.kind {
                TermKind::Smooth | TermKind::SmoothBy => {
                    let Some(x) = numeric(&needed, &t.variable)[i] else {
                        out.push(None);
                        continue 'rows;
                    };
                    if let Some(by) = &t.by_factor {
                        let Some(level) = &factor(&needed, by)[i] else {
                            out.push(None);
                            continue 'rows;
                        };
                        if !t.levels.contains(level) {
                            return Err(GammError::UnseenLevel(level.clone()));
                        }
                        if Some(level) != t.by_level.as_ref() {
                            continue;
                        }
                    }
                    let row = t.spline.as_ref().expect("smooth terms carry a spline").design(&[x]);
                    eta += row.row(0).iter().zip(beta).map(|(a, b)| a * b).sum::<f64>();
                }
                TermKind::ParametricFactor | TermKind::RandomEffect => {
                    let Some(level) = &factor(&needed, &t.variable)[i] else {
                        out.push(None);
                        continue 'rows;
                    };
                    let pos = t.levels.iter().position(|l| l == level).ok_or_else(|| GammError::UnseenLevel(level.clone()))?;
                    if t.kind == TermKind::RandomEffect {
                        eta += beta[pos];
                    } else if pos > 0 {
                        eta += beta[pos - 1];
                    }
                }
            }
        }
        out.push(Some(eta));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_coefficients_give_unit_p() {
        let beta = DVector::zeros(3);
        let v = DMatrix::identity(3, 3);
        let (f, p) = wald(&beta, &v, 2, 50.0).unwrap();
        assert_eq!((f, p.value()), (0.0, 1.0));
    }

    #[test]
    fn wald_uses_the_leading_eigenvectors() {
        let beta = DVector::from_vec(vec![2.0, 0.0]);
        let v = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 1.0]));
        let (f, _) = wald(&beta, &v, 1, 100.0).unwrap();
        assert!((f - 1.0).abs() < 1e-12);
        let (f, _) = wald(&beta, &v, 2, 100.0).unwrap();
        assert!((f - 0.5).abs() < 1e-12);
    }
}
