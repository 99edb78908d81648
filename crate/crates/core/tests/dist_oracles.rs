mod common;

use common::oracles::{f_cdf_by_quadrature, t_critical, t_two_sided_coverage};
use leaderlens_core::dist::{
    f_cdf, studentized_range_cdf, studentized_range_quantile, StudentizedRangeParams,
};
use proptest::prelude::*;

fn params(k: usize, df: f64) -> StudentizedRangeParams {
    StudentizedRangeParams::new(k, df).unwrap()
}

#[test]
fn f_cdf_matches_density_quadrature() {
    let got = f_cdf(2.5, 4.0, 20.0).unwrap();
    let want = f_cdf_by_quadrature(2.5, 4.0, 20.0);
    assert!((got - want).abs() < 1e-8, "{got} vs {want}");
    for (x, d1, d2) in [(0.3, 1.0, 1.0), (7.0, 1.0, 3.0), (1.1, 30.0, 120.0), (0.05, 12.0, 5.5)] {
        let got = f_cdf(x, d1, d2).unwrap();
        let want = f_cdf_by_quadrature(x, d1, d2);
        assert!((got - want).abs() < 1e-8, "x={x} d1={d1} d2={d2}: {got} vs {want}");
    }
}

#[test]
fn two_group_range_equals_t_coverage() {
    for df in [3.0, 5.0, 10.0, 30.0, 120.0] {
        for q in [0.2, 1.0, 2.0, 2.77, 4.0, 6.5] {
            let got = studentized_range_cdf(q, params(2, df)).unwrap();
            let want = t_two_sided_coverage(q / std::f64::consts::SQRT_2, df);
            assert!((got - want).abs() < 1e-9, "df={df} q={q}: {got} vs {want}");
        }
    }
}

#[test]
fn two_group_quantile_matches_t_critical() {
    let q = studentized_range_quantile(0.95, params(2, 30.0)).unwrap();
    let t = t_critical(0.95, 30.0);
    assert!((q / std::f64::consts::SQRT_2 - t).abs() < 1e-6, "{q} vs {t}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn f_cdf_reciprocal_symmetry(x in 0.01f64..50.0, d1 in 0.5f64..80.0, d2 in 0.5f64..80.0) {
        let lhs = f_cdf(x, d1, d2).unwrap();
        let rhs = 1.0 - f_cdf(1.0 / x, d2, d1).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-9);
    }

    #[test]
    fn f_cdf_monotone_in_x(x in 0.0f64..20.0, dx in 0.0f64..5.0, d1 in 0.5f64..40.0, d2 in 0.5f64..40.0) {
        let a = f_cdf(x, d1, d2).unwrap();
        let b = f_cdf(x + dx, d1, d2).unwrap();
        prop_assert!((0.0..=1.0).contains(&a) && (0.0..=1.0).contains(&b));
        prop_assert!(b >= a - 1e-15);
    }
}

#[test]
fn quantile_cdf_roundtrip_grid() {
    let start = std::time::Instant::now();
    let mut worst: f64 = 0.0;
    for k in 2..=12 {
        for df in [5.0, 10.0, 30.0, 120.0] {
            for p in [0.5, 0.9, 0.95, 0.99] {
                let q = studentized_range_quantile(p, params(k, df)).unwrap();
                let back = studentized_range_cdf(q, params(k, df)).unwrap();
                worst = worst.max((back - p).abs());
            }
        }
    }
    eprintln!("worst roundtrip error {worst:e} in {:?}", start.elapsed());
    assert!(worst <= 1e-6);
}
