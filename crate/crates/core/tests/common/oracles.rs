//! Independent numerical oracles used by the integration and acceptance tests.
//!
//! Nothing here calls into the implementation paths it is used to check,
//! except `reg_incomplete_beta` for the Student-t route, which is a different
//! formula from the double integral behind the studentized range.

#![allow(dead_code)]

use leaderlens_core::dist::{ln_gamma, reg_incomplete_beta};

const XGK: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
];
const WGK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];
const WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let x = h * XGK[j];
        let s = f(c - x) + f(c + x);
        kronrod += WGK[j] * s;
        if j % 2 == 1 {
            gauss += WG[j / 2] * s;
        }
    }
    (kronrod * h, ((kronrod - gauss) * h).abs())
}

/// Adaptive Gauss–Kronrod (7/15) quadrature with global error control.
pub fn adaptive_integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    let mut intervals = vec![{
        let (v, e) = gk15(&f, a, b);
        (a, b, v, e)
    }];
    for _ in 0..5000 {
        let total_err: f64 = intervals.iter().map(|iv| iv.3).sum();
        if total_err < tol {
            break;
        }
        let (idx, _) = intervals
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.partial_cmp(&y.1 .3).unwrap())
            .unwrap();
        let (lo, hi, _, _) = intervals.swap_remove(idx);
        let mid = 0.5 * (lo + hi);
        let (v1, e1) = gk15(&f, lo, mid);
        let (v2, e2) = gk15(&f, mid, hi);
        intervals.push((lo, mid, v1, e1));
        intervals.push((mid, hi, v2, e2));
    }
    intervals.iter().map(|iv| iv.2).sum()
}

/// Density of the F(d1, d2) distribution.
pub fn f_density(x: f64, d1: f64, d2: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let ln = 0.5 * d1 * (d1 / d2).ln() + (0.5 * d1 - 1.0) * x.ln()
        - 0.5 * (d1 + d2) * (1.0 + d1 * x / d2).ln()
        - (ln_gamma(0.5 * d1) + ln_gamma(0.5 * d2) - ln_gamma(0.5 * (d1 + d2)));
    ln.exp()
}

/// P(F ≤ x) by integrating the density over u with x = u², which removes the
/// x^(d1/2 - 1) singularity at the origin.
pub fn f_cdf_by_quadrature(x: f64, d1: f64, d2: f64) -> f64 {
    let root = x.sqrt();
    adaptive_integrate(|u| 2.0 * u * f_density(u * u, d1, d2), 0.0, root, 1e-14)
}

/// P(|T_df| ≤ t) via the incomplete beta representation of the t distribution.
pub fn t_two_sided_coverage(t: f64, df: f64) -> f64 {
    1.0 - reg_incomplete_beta(0.5 * df, 0.5, df / (df + t * t)).unwrap()
}

/// Two-sided p-value of a Student-t statistic.
pub fn t_two_sided_p(t: f64, df: f64) -> f64 {
    reg_incomplete_beta(0.5 * df, 0.5, df / (df + t * t)).unwrap()
}

/// Two-sided t critical value for coverage `p`, by bisection on the incomplete beta route.
pub fn t_critical(p: f64, df: f64) -> f64 {
    let (mut lo, mut hi) = (0.0, 1.0);
    while t_two_sided_coverage(hi, df) < p {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if t_two_sided_coverage(mid, df) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Pooled two-sample t test, two-sided p-value.
pub fn pooled_t_p(a: &[f64], b: &[f64]) -> f64 {
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (ma, mb) = (mean(a), mean(b));
    let ssa: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let ssb: f64 = b.iter().map(|x| (x - mb).powi(2)).sum();
    let df = (a.len() + b.len() - 2) as f64;
    let sp2 = (ssa + ssb) / df;
    let t = (ma - mb) / (sp2 * (1.0 / a.len() as f64 + 1.0 / b.len() as f64)).sqrt();
    t_two_sided_p(t, df)
}

/// F statistic of a one-way layout, computed directly from its definition.
pub fn f_statistic(groups: &[Vec<f64>]) -> f64 {
    let n: usize = groups.iter().map(|g| g.len()).sum();
    let k = groups.len();
    let grand = groups.iter().flatten().sum::<f64>() / n as f64;
    let mut between = 0.0;
    let mut within = 0.0;
    for g in groups {
        let m = g.iter().sum::<f64>() / g.len() as f64;
        between += g.len() as f64 * (m - grand).powi(2);
        within += g.iter().map(|x| (x - m).powi(2)).sum::<f64>();
    }
    (between / (k - 1) as f64) / (within / (n - k) as f64)
}
