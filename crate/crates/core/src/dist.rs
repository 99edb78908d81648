//! Special functions and distribution tails used by the grouped tests.
//!
//! Only what one-way ANOVA and Tukey HSD need: the regularized incomplete
//! beta function, the F distribution, and the studentized range
//! distribution with its quantile.
//!
//! The studentized range CDF is evaluated from the usual double integral
//!
//! ```text
//! P(Q <= q) = ∫_0^∞ f_s(s) W(q s) ds,
//! W(w)      = k ∫ φ(z) [Φ(z) - Φ(z - w)]^(k-1) dz
//! ```
//!
//! where `s` is distributed as `sqrt(χ²_ν / ν)`. The outer integral runs over
//! `t = ln s` so the integrand stays bounded for every `ν > 0`; it is split
//! into panels of a 40-point Gauss–Legendre rule. The inner integral is
//! truncated to `z ∈ [-8, 8]` and uses two 64-point panels.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::quadrature::{rule_40, rule_64};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DistError {
    #[error("argument outside the function's domain: {0}")]
    DomainError(String),
    #[error("root finding did not converge after {0} iterations")]
    ConvergenceFailure(usize),
}

pub type Result<T> = std::result::Result<T, DistError>;

/// A probability in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PValue(f64);

impl PValue {
    /// Clamps into [0, 1]; NaN becomes 1 (no evidence).
    pub fn new(value: f64) -> Self {
        if value.is_nan() {
            PValue(1.0)
        } else {
            PValue(value.clamp(0.0, 1.0))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn is_significant(self, alpha: f64) -> bool {
        self.0 < alpha
    }
}

impl std::fmt::Display for PValue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Number of groups and error degrees of freedom for the studentized range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StudentizedRangeParams {
    pub k: usize,
    pub df: f64,
}

impl StudentizedRangeParams {
    pub fn new(k: usize, df: f64) -> Result<Self> {
        if k < 2 {
            return Err(DistError::DomainError(format!("k = {k} must be at least 2")));
        }
        if !(df > 0.0) {
            return Err(DistError::DomainError(format!("df = {df} must be positive")));
        }
        Ok(Self { k, df })
    }
}

pub fn ln_gamma(x: f64) -> f64 {
    libm::lgamma(x)
}

fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

/// Regularized incomplete beta function I_x(a, b).
pub fn reg_incomplete_beta(a: f64, b: f64, x: f64) -> Result<f64> {
    if !(a > 0.0) || !(b > 0.0) || a.is_infinite() || b.is_infinite() {
        return Err(DistError::DomainError(format!("shape parameters a = {a}, b = {b}")));
    }
    if !(0.0..=1.0).contains(&x) {
        return Err(DistError::DomainError(format!("x = {x} outside [0, 1]")));
    }
    Ok(inc_beta_unchecked(a, b, x))
}

/// Complement 1 - I_x(a, b) evaluated without cancellation, given both x and 1 - x.
fn inc_beta_upper(a: f64, b: f64, x: f64, one_minus_x: f64) -> f64 {
    inc_beta_from_parts(b, a, one_minus_x, x)
}

fn inc_beta_unchecked(a: f64, b: f64, x: f64) -> f64 {
    inc_beta_from_parts(a, b, x, 1.0 - x)
}

fn inc_beta_from_parts(a: f64, b: f64, x: f64, y: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if y <= 0.0 {
        return 1.0;
    }
    let ln_front = a * x.ln() + b * y.ln() - ln_beta(a, b);
    if x > (a + 1.0) / (a + b + 2.0) {
        let front = ln_front.exp();
        1.0 - front * beta_cf(b, a, y) / b
    } else {
        let front = ln_front.exp();
        front * beta_cf(a, b, x) / a
    }
}

/// Continued fraction for the incomplete beta function (modified Lentz).
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-16;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=20_000 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

fn check_df(d1: f64, d2: f64) -> Result<()> {
    if !(d1 > 0.0) || !(d2 > 0.0) {
        return Err(DistError::DomainError(format!("degrees of freedom d1 = {d1}, d2 = {d2}")));
    }
    Ok(())
}

/// P(F ≤ x) for F ~ F(d1, d2).
pub fn f_cdf(x: f64, d1: f64, d2: f64) -> Result<f64> {
    check_df(d1, d2)?;
    if x.is_nan() {
        return Err(DistError::DomainError("x is NaN".into()));
    }
    if x <= 0.0 {
        return Ok(0.0);
    }
    if x.is_infinite() {
        return Ok(1.0);
    }
    let denom = d1 * x + d2;
    Ok(inc_beta_from_parts(d1 / 2.0, d2 / 2.0, d1 * x / denom, d2 / denom))
}

/// P(F > x) for F ~ F(d1, d2), accurate in the far upper tail.
pub fn f_sf(x: f64, d1: f64, d2: f64) -> Result<f64> {
    check_df(d1, d2)?;
    if x.is_nan() {
        return Err(DistError::DomainError("x is NaN".into()));
    }
    if x <= 0.0 {
        return Ok(1.0);
    }
    if x.is_infinite() {
        return Ok(0.0);
    }
    let denom = d1 * x + d2;
    Ok(inc_beta_upper(d1 / 2.0, d2 / 2.0, d1 * x / denom, d2 / denom))
}

pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z * std::f64::consts::FRAC_1_SQRT_2)
}

pub fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

const INNER_HALF_RANGE: f64 = 8.0;
const OUTER_LOG_DROP: f64 = 50.0;
const NEGLIGIBLE: f64 = 1e-22;

/// Fixed inner nodes: z, φ(z)·weight and Φ(z).
struct InnerGrid {
    z: Vec<f64>,
    wphi: Vec<f64>,
    cdf: Vec<f64>,
}

fn inner_grid() -> &'static InnerGrid {
    static GRID: std::sync::OnceLock<InnerGrid> = std::sync::OnceLock::new();
    GRID.get_or_init(|| {
        let rule = rule_64();
        let mut grid = InnerGrid { z: Vec::new(), wphi: Vec::new(), cdf: Vec::new() };
        for (a, b) in [(-INNER_HALF_RANGE, 0.0), (0.0, INNER_HALF_RANGE)] {
            let half = 0.5 * (b - a);
            let mid = 0.5 * (a + b);
            for (x, w) in rule.nodes.iter().zip(&rule.weights) {
                let z = mid + half * x;
                grid.z.push(z);
                grid.wphi.push(w * half * normal_pdf(z));
                grid.cdf.push(normal_cdf(z));
            }
        }
        grid
    })
}

/// Probability that the range of k iid standard normals is at most w.
fn range_prob(w: f64, k: usize) -> f64 {
    if w <= 0.0 {
        return 0.0;
    }
    // P(range > w) <= 2k Φ(-w/2)
    if 2.0 * k as f64 * normal_cdf(-0.5 * w) < 1e-17 {
        return 1.0;
    }
    let grid = inner_grid();
    let e = (k - 1) as i32;
    let mut acc = 0.0;
    for i in 0..grid.z.len() {
        let diff = grid.cdf[i] - normal_cdf(grid.z[i] - w);
        if diff > 0.0 {
            acc += grid.wphi[i] * diff.powi(e);
        }
    }
    (k as f64 * acc).clamp(0.0, 1.0)
}

/// Log density of t = ln s with s ~ sqrt(χ²_ν/ν), relative to its value at the mode t = 0.
fn log_scale_density_rel(t: f64, df: f64) -> f64 {
    df * t - 0.5 * df * ((2.0 * t).exp() - 1.0)
}

fn log_scale_density_at_mode(df: f64) -> f64 {
    std::f64::consts::LN_2 + 0.5 * df * (0.5 * df).ln() - ln_gamma(0.5 * df) - 0.5 * df
}

/// Point where the relative log density has dropped by `OUTER_LOG_DROP`, on one side of the mode.
fn outer_bound(df: f64, upper: bool) -> f64 {
    let mut inner = 0.0;
    let mut outer: f64 = if upper { 1.0 } else { -1.0 };
    while log_scale_density_rel(outer, df) > -OUTER_LOG_DROP {
        outer *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (inner + outer);
        if log_scale_density_rel(mid, df) > -OUTER_LOG_DROP {
            inner = mid;
        } else {
            outer = mid;
        }
        if (outer - inner).abs() < 1e-12 {
            break;
        }
    }
    outer
}

/// Outer nodes (t, weight·density) for a given df.
fn outer_nodes(df: f64) -> Vec<(f64, f64)> {
    let lo = outer_bound(df, false);
    let hi = outer_bound(df, true);
    let sd = 1.0 / (2.0 * df).sqrt();
    let max_width = (4.0 * sd).clamp(0.05, 4.0);
    let g0 = log_scale_density_at_mode(df);
    let rule = rule_40();
    let mut out = Vec::new();
    for (a, b) in [(lo, 0.0), (0.0, hi)] {
        let panels = ((b - a).abs() / max_width).ceil().max(1.0) as usize;
        let width = (b - a) / panels as f64;
        for p in 0..panels {
            let pa = a + p as f64 * width;
            let half = 0.5 * width;
            let mid = pa + half;
            for (x, w) in rule.nodes.iter().zip(&rule.weights) {
                let t = mid + half * x;
                let dens = (g0 + log_scale_density_rel(t, df)).exp();
                out.push((t, w * half * dens));
            }
        }
    }
    out
}

/// CDF of the studentized range distribution.
pub fn studentized_range_cdf(q: f64, params: StudentizedRangeParams) -> Result<f64> {
    let StudentizedRangeParams { k, df } = StudentizedRangeParams::new(params.k, params.df)?;
    if q.is_nan() || q < 0.0 {
        return Err(DistError::DomainError(format!("q = {q} must be non-negative")));
    }
    if q == 0.0 {
        return Ok(0.0);
    }
    if q.is_infinite() {
        return Ok(1.0);
    }
    let nodes = outer_nodes(df);
    let mut mass = 0.0;
    let mut acc = 0.0;
    for &(t, wd) in &nodes {
        mass += wd;
        let w = q * t.exp();
        // W(w) <= P(|Z1 - Z2| <= w) <= w / sqrt(pi)
        if wd * (w / std::f64::consts::PI.sqrt()).min(1.0) < NEGLIGIBLE {
            continue;
        }
        acc += wd * range_prob(w, k);
    }
    Ok((acc / mass).clamp(0.0, 1.0))
}

/// Quantile of the studentized range distribution.
pub fn studentized_range_quantile(p: f64, params: StudentizedRangeParams) -> Result<f64> {
    let params = StudentizedRangeParams::new(params.k, params.df)?;
    if !(p > 0.0 && p < 1.0) {
        return Err(DistError::DomainError(format!("p = {p} outside (0, 1)")));
    }
    const MAX_ITER: usize = 300;
    let cdf = |q: f64| studentized_range_cdf(q, params);

    let mut lo = 0.0;
    let mut f_lo = -p;
    let mut hi = 1.0;
    let mut f_hi = cdf(hi)? - p;
    let mut iter = 0;
    while f_hi < 0.0 {
        lo = hi;
        f_lo = f_hi;
        hi *= 2.0;
        f_hi = cdf(hi)? - p;
        iter += 1;
        if iter > 60 {
            return Err(DistError::ConvergenceFailure(iter));
        }
    }
    // Bisection to a coarse bracket, then secant steps safeguarded by the bracket.
    while hi - lo > 0.05 {
        let mid = 0.5 * (lo + hi);
        let f_mid = cdf(mid)? - p;
        if f_mid < 0.0 {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
            f_hi = f_mid;
        }
        iter += 1;
    }
    let mut best = if f_lo.abs() < f_hi.abs() { lo } else { hi };
    let mut best_f = f_lo.abs().min(f_hi.abs());
    while iter < MAX_ITER {
        iter += 1;
        let mut x = lo - f_lo * (hi - lo) / (f_hi - f_lo);
        if !(x > lo && x < hi) || !x.is_finite() {
            x = 0.5 * (lo + hi);
        }
        let fx = cdf(x)? - p;
        if fx.abs() < best_f {
            best = x;
            best_f = fx.abs();
        }
        if fx.abs() < 1e-13 || (hi - lo) < 1e-13 * hi.max(1.0) {
            return Ok(x);
        }
        if fx < 0.0 {
            // Illinois modification keeps both ends moving.
            if f_hi > 0.0 && (x - lo) < 0.5 * (hi - lo) {
                f_hi *= 0.5;
            }
            lo = x;
            f_lo = fx;
        } else {
            if f_lo < 0.0 && (hi - x) < 0.5 * (hi - lo) {
                f_lo *= 0.5;
            }
            hi = x;
            f_hi = fx;
        }
    }
    if best_f < 1e-9 {
        Ok(best)
    } else {
        Err(DistError::ConvergenceFailure(MAX_ITER))
    }
}
