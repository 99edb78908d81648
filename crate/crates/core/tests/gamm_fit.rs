mod common;

use common::tables::TableBuilder;
use leaderlens_core::data::AnalysisTable;
use leaderlens_core::gamm::{
    fit_gamm, fit_gamm_with, parse_formula, partial_effect, partial_effect_at, predict, prepare_fit, reml_gradient,
    reml_score, smooth_significance, FitOptions, GammError, GammFit,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

fn sine_data(seed: u64, n: usize, sigma: f64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, sigma).unwrap();
    let x: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
    let y = x.iter().map(|&x| (2.0 * std::f64::consts::PI * x).sin() + noise.sample(&mut rng)).collect();
    (x, y)
}

fn xy_table(x: &[f64], y: &[f64]) -> AnalysisTable {
    TableBuilder::new(x.len()).num("x", x).num("y", y).build()
}

fn fit(text: &str, table: &AnalysisTable) -> GammFit {
    fit_gamm(&parse_formula(text).unwrap(), table, None).unwrap()
}

fn edf(fit: &GammFit, id: &str) -> f64 {
    fit.summary(id).unwrap().edf
}

fn wls_line(x: &[f64], y: &[f64], w: &[f64]) -> (f64, f64) {
    let sw: f64 = w.iter().sum();
    let mx = x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let my = y.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let sxy: f64 = x.iter().zip(y).zip(w).map(|((a, b), c)| c * (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().zip(w).map(|(a, c)| c * (a - mx).powi(2)).sum();
    let slope = sxy / sxx;
    (my - slope * mx, slope)
}

#[test]
fn noiseless_line_is_reproduced() {
    let x: Vec<f64> = (0..80).map(|i| (i as f64 * 0.37).sin() * 3.0 + i as f64 * 0.05).collect();
    let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
    let f = fit("y ~ s(x)", &xy_table(&x, &y));
    let max_r = f.fitted.iter().zip(&y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(max_r <= 1e-6, "max residual {max_r}");
    assert!(edf(&f, "s(x)") <= 1.2, "edf {}", edf(&f, "s(x)"));
}

#[test]
fn sine_is_recovered() {
    let (x, y) = sine_data(1, 500, 0.2);
    let f = fit("y ~ s(x)", &xy_table(&x, &y));
    let rmse = (f.fitted.iter().zip(&x).map(|(a, x)| (a - (2.0 * std::f64::consts::PI * x).sin()).powi(2)).sum::<f64>()
        / x.len() as f64)
        .sqrt();
    assert!(rmse < 0.1, "rmse {rmse}");
    assert!(smooth_significance(&f, "s(x)").unwrap().value() < 1e-6);
    let s = f.summary("s(x)").unwrap();
    assert!(s.edf > 3.0 && s.edf <= 9.0);
}

#[test]
fn huge_lambda_gives_the_weighted_line() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (x, y) = sine_data(2, 300, 0.3);
    let w: Vec<f64> = (0..x.len()).map(|_| rng.gen_range(0.5..3.0)).collect();
    let table = xy_table(&x, &y);
    let formula = parse_formula("y ~ s(x)").unwrap();
    let opts = FitOptions { fixed_lambda: Some(vec![1e8]), ..Default::default() };
    let f = fit_gamm_with(&formula, &table, Some(&w), &opts).unwrap();
    let (a, b) = wls_line(&x, &y, &w);
    let worst = f.fitted.iter().zip(&x).map(|(v, x)| (v - (a + b * x)).abs()).fold(0.0, f64::max);
    assert!(worst <= 1e-4, "max deviation from line {worst}");
    assert!((edf(&f, "s(x)") - 1.0).abs() <= 0.05);
}

fn two_term_table(seed: u64) -> AnalysisTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 240;
    let offsets: Vec<f64> = (0..8).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let mut x = Vec::new();
    let mut g = Vec::new();
    let mut y = Vec::new();
    for i in 0..n {
        let xi: f64 = rng.gen_range(-2.0..2.0);
        let level = i % 8;
        x.push(xi);
        g.push(format!("g{level}"));
        y.push(xi.powi(2) * 0.5 + offsets[level] + 0.4 * rng.sample::<f64, _>(StandardNormal));
    }
    TableBuilder::new(n).num("x", &x).num("y", &y).fac("g", &g).build()
}

#[test]
fn reml_gradient_matches_finite_differences() {
    let table = two_term_table(9);
    let formula = parse_formula("y ~ s(x) + re(g)").unwrap();
    let state = prepare_fit(&formula, &table, None).unwrap();
    assert_eq!(state.n_penalties(), 2);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let h = 1e-5;
    for _ in 0..20 {
        let rho: Vec<f64> = (0..2).map(|_| rng.gen_range(-6.0..6.0)).collect();
        let lam: Vec<f64> = rho.iter().map(|r: &f64| r.exp()).collect();
        let g = reml_gradient(&lam, &state).unwrap();
        for j in 0..2 {
            let mut up = lam.clone();
            let mut dn = lam.clone();
            up[j] = (rho[j] + h).exp();
            dn[j] = (rho[j] - h).exp();
            let fd = (reml_score(&up, &state).unwrap() - reml_score(&dn, &state).unwrap()) / (2.0 * h);
            let rel = (g[j] - fd).abs() / fd.abs().max(g[j].abs()).max(1e-2);
            assert!(rel <= 1e-4, "rho={rho:?} j={j}: analytic {} vs fd {fd}", g[j]);
        }
    }
}

#[test]
fn reml_score_is_continuous() {
    let table = two_term_table(12);
    let state = prepare_fit(&parse_formula("y ~ s(x) + re(g)").unwrap(), &table, None).unwrap();
    for lam in [[1e-3, 1.0], [0.5, 20.0], [1e4, 1e-2]] {
        let a = reml_score(&lam, &state).unwrap();
        let b = reml_score(&[lam[0] * (1.0 + 1e-8), lam[1]], &state).unwrap();
        assert!((a - b).abs() <= 1e-4 * (1.0 + a.abs()));
    }
    assert!(matches!(reml_score(&[0.0, 1.0], &state), Err(GammError::InvalidLambda(_))));
    assert!(matches!(reml_score(&[1.0], &state), Err(GammError::InvalidLambda(_))));
}

#[test]
fn pure_noise_drives_edf_to_null_space() {
    let mut edfs = Vec::new();
    for seed in 0..100 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let x: Vec<f64> = (0..200).map(|_| rng.gen::<f64>()).collect();
        let y: Vec<f64> = (0..200).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        edfs.push(edf(&fit("y ~ s(x)", &xy_table(&x, &y)), "s(x)"));
    }
    edfs.sort_by(|a, b| a.total_cmp(b));
    let median = 0.5 * (edfs[49] + edfs[50]);
    assert!(median <= 1.5, "median edf {median}");
}

#[test]
fn unpenalized_residual_directions_are_orthogonal() {
    let table = two_term_table(13);
    let mut t = table;
    let h: Vec<String> = (0..t.len()).map(|i| if i % 3 == 0 { "a".into() } else { "b".into() }).collect();
    t.add_column("h", leaderlens_core::data::Column::Categorical(h.iter().cloned().map(Some).collect())).unwrap();
    let f = fit("y ~ s(x) + h + re(g)", &t);
    let y: Vec<f64> = t.numeric("y").unwrap().into_iter().map(|v| v.unwrap()).collect();
    let resid: Vec<f64> = y.iter().zip(&f.fitted).map(|(a, b)| a - b).collect();
    let norm_y = y.iter().map(|v| v * v).sum::<f64>().sqrt();
    let intercept: f64 = resid.iter().sum();
    let factor_b: f64 = resid.iter().zip(&h).filter(|(_, l)| *l == "b").map(|(r, _)| r).sum();
    assert!(intercept.abs() <= 1e-6 * norm_y);
    assert!(factor_b.abs() <= 1e-6 * norm_y);
}

#[test]
fn pointwise_intervals_are_calibrated() {
    let mut covered = 0usize;
    let mut total = 0usize;
    for rep in 0..200 {
        let (x, y) = sine_data(5000 + rep, 200, 0.2);
        let f = fit("y ~ s(x)", &xy_table(&x, &y));
        let truth: Vec<f64> = x.iter().map(|x| (2.0 * std::f64::consts::PI * x).sin()).collect();
        let mean_truth = truth.iter().sum::<f64>() / truth.len() as f64;
        let pe = partial_effect_at(&f, "s(x)", &x).unwrap();
        for i in 0..x.len() {
            let t = truth[i] - mean_truth;
            if pe.ci_low[i] <= t && t <= pe.ci_high[i] {
                covered += 1;
            }
            total += 1;
        }
    }
    let coverage = covered as f64 / total as f64;
    assert!((0.90..=0.98).contains(&coverage), "coverage {coverage}");
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

#[test]
fn random_effects_are_recovered() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let truth: Vec<f64> = (0..20).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let mut g = Vec::new();
    let mut y = Vec::new();
    for (l, off) in truth.iter().enumerate() {
        for _ in 0..30 {
            g.push(format!("L{l:02}"));
            y.push(2.0 + off + rng.sample::<f64, _>(StandardNormal));
        }
    }
    let table = TableBuilder::new(y.len()).num("y", &y).fac("g", &g).build();
    let f = fit("y ~ re(g)", &table);
    let est = f.term_coefficients("re(g)").unwrap();
    let r = pearson(est, &truth);
    assert!(r > 0.9, "correlation {r}");
    assert!(smooth_significance(&f, "re(g)").unwrap().value() < 1e-6);
}

#[test]
fn integer_weights_match_row_replication() {
    let base = two_term_table(21);
    let n = base.len();
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let w: Vec<f64> = (0..n).map(|_| rng.gen_range(1..=3) as f64).collect();
    let mut rows = Vec::new();
    for (i, wi) in w.iter().enumerate() {
        for _ in 0..*wi as usize {
            rows.push(i);
        }
    }
    let replicated = base.select(&rows);
    let formula = parse_formula("y ~ s(x) + re(g)").unwrap();
    let a = fit_gamm(&formula, &base, Some(&w)).unwrap();
    let b = fit_gamm(&formula, &replicated, None).unwrap();
    for (ca, cb) in a.coefficients.iter().zip(&b.coefficients) {
        assert!((ca - cb).abs() <= 1e-8, "{ca} vs {cb}");
    }
    assert!((a.sigma2 - b.sigma2).abs() <= 1e-8 * a.sigma2);
}

#[test]
fn fits_are_bit_identical() {
    let table = two_term_table(31);
    let a = serde_json::to_string(&fit("y ~ s(x) + re(g)", &table)).unwrap();
    let b = serde_json::to_string(&fit("y ~ s(x) + re(g)", &table)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn null_false_positive_rate() {
    let mut hits = 0;
    for seed in 0..500 {
        let mut rng = ChaCha8Rng::seed_from_u64(90_000 + seed);
        let x: Vec<f64> = (0..100).map(|_| rng.gen::<f64>()).collect();
        let y: Vec<f64> = (0..100).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let f = fit("y ~ s(x)", &xy_table(&x, &y));
        if smooth_significance(&f, "s(x)").unwrap().value() < 0.05 {
            hits += 1;
        }
    }
    let rate = hits as f64 / 500.0;
    assert!((0.01..=0.12).contains(&rate), "false positive rate {rate}");
}

#[test]
fn fit_invariants() {
    let table = two_term_table(41);
    let f = fit("y ~ s(x) + re(g)", &table);
    let p = f.coefficients.len();
    let mut total = 1.0;
    for s in &f.summaries {
        assert!(s.edf >= -1e-9 && s.edf <= s.columns as f64 + 1e-9);
        total += s.edf;
    }
    assert!(total <= p as f64 + 1e-9);
    let v = &f.covariance;
    assert!((v - v.transpose()).amax() <= 1e-12 * v.amax());
    assert!(v.clone().symmetric_eigen().eigenvalues.min() >= -1e-10 * v.amax());
    assert!(f.sigma2 > 0.0);
    let pred = predict(&f, &table).unwrap();
    for (a, b) in pred.iter().zip(&f.fitted) {
        assert!((a.unwrap() - b).abs() <= 1e-10);
    }
}

#[test]
fn partial_effect_properties() {
    let (x, y) = sine_data(3, 500, 0.2);
    let f = fit("y ~ s(x)", &xy_table(&x, &y));
    let at_data = partial_effect_at(&f, "s(x)", &x).unwrap();
    let mean = at_data.estimate.iter().sum::<f64>() / x.len() as f64;
    assert!(mean.abs() <= 1e-6, "mean {mean}");

    let pe = partial_effect(&f, "s(x)", 101).unwrap();
    assert_eq!(pe.grid.len(), 101);
    for i in 0..101 {
        assert!(pe.ci_low[i] <= pe.estimate[i] && pe.estimate[i] <= pe.ci_high[i]);
    }
    assert!(pe.ci_width(100) > pe.ci_width(50));
    let fracs: Vec<f64> = pe.quantile_marks.iter().map(|m| m.0).collect();
    assert_eq!(fracs, vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0]);
    let mut sorted = x.clone();
    sorted.sort_by(|a, b| a.total_cmp(b));
    assert_eq!(pe.quantile_marks[0].1, sorted[0]);
    assert_eq!(pe.quantile_marks[5].1, sorted[499]);
    assert!(pe.to_csv().starts_with("x,estimate,ci_low,ci_high\n"));
    assert!(matches!(partial_effect(&f, "s(z)", 10), Err(GammError::TermNotFound(_))));
}

#[test]
fn weighted_partial_effect_is_centered() {
    let (x, y) = sine_data(8, 300, 0.2);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let w: Vec<f64> = (0..x.len()).map(|_| rng.gen_range(0.2..5.0)).collect();
    let f = fit_gamm(&parse_formula("y ~ s(x)").unwrap(), &xy_table(&x, &y), Some(&w)).unwrap();
    let pe = partial_effect_at(&f, "s(x)", &x).unwrap();
    let wm = pe.estimate.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() / w.iter().sum::<f64>();
    assert!(wm.abs() <= 1e-6);
}

#[test]
fn constant_response_predicts_constant() {
    let x: Vec<f64> = (0..60).map(|i| i as f64 / 7.0).collect();
    let y = vec![4.25; 60];
    let f = fit("y ~ s(x)", &xy_table(&x, &y));
    let grid: Vec<f64> = (0..20).map(|i| -3.0 + i as f64).collect();
    let new = xy_table(&grid, &vec![0.0; 20]);
    for p in predict(&f, &new).unwrap() {
        assert!((p.unwrap() - 4.25).abs() < 1e-8);
    }
}

#[test]
fn unseen_levels_are_rejected() {
    let table = two_term_table(51);
    let f = fit("y ~ s(x) + re(g)", &table);
    let other = TableBuilder::new(2).num("x", &[0.0, 1.0]).num("y", &[0.0, 0.0]).fac("g", &["g1".into(), "zz".into()]).build();
    match predict(&f, &other) {
        Err(GammError::UnseenLevel(l)) => assert_eq!(l, "zz"),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn by_smooths_fit_per_level() {
    let mut rng = ChaCha8Rng::seed_from_u64(61);
    let n = 360;
    let mut x = Vec::new();
    let mut g = Vec::new();
    let mut y = Vec::new();
    for i in 0..n {
        let xi: f64 = rng.gen();
        let (level, f) = match i % 3 {
            0 => ("a", (6.0 * xi).sin()),
            1 => ("b", 2.0 * xi),
            _ => ("c", 1.0 + (3.0 * xi).cos()),
        };
        x.push(xi);
        g.push(level.to_string());
        y.push(f + 0.1 * rng.sample::<f64, _>(StandardNormal));
    }
    // a fourth level with only three distinct x values is skipped
    for i in 0..6 {
        x.push((i % 3) as f64 / 2.0);
        g.push("d".into());
        y.push(0.0);
    }
    let table = TableBuilder::new(x.len()).num("x", &x).num("y", &y).fac("g", &g).build();
    let f = fit("y ~ s(x, by=g) + g", &table);
    let ids: Vec<&str> = f.terms.iter().map(|t| t.id.as_str()).collect();
    assert_eq!(ids, vec!["s(x):g=a", "s(x):g=b", "s(x):g=c", "g"]);
    assert_eq!(f.lambda.len(), 3);
    assert!(f.notes.iter().any(|n| n.contains("`d` skipped")));
    assert!(edf(&f, "s(x):g=b") < 1.5);
    assert!(edf(&f, "s(x):g=a") > 3.0);
    let pred = predict(&f, &table).unwrap();
    for (a, b) in pred.iter().zip(&f.fitted) {
        assert!((a.unwrap() - b).abs() <= 1e-10);
    }
}

#[test]
fn missing_values_drop_records() {
    let (x, y) = sine_data(71, 100, 0.2);
    let mut yo: Vec<Option<f64>> = y.iter().map(|v| Some(*v)).collect();
    yo[3] = None;
    yo[50] = None;
    let table = TableBuilder::new(100).num("x", &x).num_opt("y", yo).build();
    let f = fit("y ~ s(x)", &table);
    assert_eq!(f.n_used, 98);
    let dropped: Vec<usize> = f.dropped_records.iter().map(|d| d.index).collect();
    assert_eq!(dropped, vec![3, 50]);
    assert_eq!(f.dropped_records[0].missing, vec!["y".to_string()]);
    let pred = predict(&f, &table).unwrap();
    assert!(pred[3].is_some());
}

#[test]
fn data_requirements() {
    let (x, y) = sine_data(81, 12, 0.2);
    let err = fit_gamm(&parse_formula("y ~ s(x)").unwrap(), &xy_table(&x, &y), None).unwrap_err();
    assert!(matches!(err, GammError::NotEnoughData { n: 12, required: 15 }), "{err:?}");
    let few: Vec<f64> = (0..40).map(|i| (i % 5) as f64).collect();
    let err = fit_gamm(&parse_formula("y ~ s(x)").unwrap(), &xy_table(&few, &few), None).unwrap_err();
    assert!(matches!(err, GammError::TooFewDistinctValues { distinct: 5, k: 10 }));
    let g = vec!["one".to_string(); 40];
    let t = TableBuilder::new(40).num("y", &few).fac("g", &g).build();
    assert!(matches!(
        fit_gamm(&parse_formula("y ~ re(g)").unwrap(), &t, None),
        Err(GammError::DegenerateFactor(_))
    ));
}
