use leaderlens_core::tsne::{
    compute_affinities, embed, kl_divergence, knn_agreement, q_matrix, row_entropy_bits, tsne_embed, TsneParams,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn gaussian(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()).collect()
}

fn three_clusters(seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut feats = Vec::new();
    let mut labels = Vec::new();
    for c in 0..3 {
        for _ in 0..100 {
            let row: Vec<f64> = (0..10)
                .map(|j| if j == c { 10.0 } else { 0.0 } + 0.1 * rng.sample::<f64, _>(StandardNormal))
                .collect();
            feats.push(row);
            labels.push(c);
        }
    }
    (feats, labels)
}

fn keys(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("model-{i:04}")).collect()
}

#[test]
fn achieved_perplexity_matches_target() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let f = gaussian(&mut rng, 200, 6);
    let a = compute_affinities(&f, 30.0).unwrap();
    let target = 30f64.log2();
    for i in 0..200 {
        let h = row_entropy_bits(&f, i, a.betas[i]);
        assert!((h - target).abs() < 1e-3, "row {i}: {h} bits");
    }
}

#[test]
fn affinity_invariants() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let f = gaussian(&mut rng, 120, 4);
    let a = compute_affinities(&f, 15.0).unwrap();
    assert!((a.p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    for i in 0..a.n {
        assert_eq!(a.get(i, i), 0.0);
        for j in 0..a.n {
            assert!(a.get(i, j) >= 0.0);
            assert!((a.get(i, j) - a.get(j, i)).abs() <= 1e-12);
        }
    }
}

#[test]
fn three_clusters_separate() {
    let (f, labels) = three_clusters(11);
    let emb = tsne_embed(&f, &keys(300), 42, &TsneParams::default()).unwrap();
    let agree = knn_agreement(&emb.coords, &labels, 10);
    assert!(agree > 0.95, "agreement {agree}");
    assert!(emb.coords.iter().all(|c| c[0].is_finite() && c[1].is_finite()));
    let after = emb.kl_at(250).unwrap();
    assert!(emb.final_kl() < after, "final {} vs {after}", emb.final_kl());
    assert_eq!(emb.kl_trace.last().unwrap().0, 1000);
}

#[test]
fn reruns_are_bit_identical() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let f = gaussian(&mut rng, 90, 5);
    let params = TsneParams { iterations: 300, ..TsneParams::default() };
    let a = tsne_embed(&f, &keys(90), 5, &params).unwrap();
    let b = tsne_embed(&f, &keys(90), 5, &params).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    let c = tsne_embed(&f, &keys(90), 6, &params).unwrap();
    assert_ne!(a.coords, c.coords);
}

#[test]
fn row_permutation_permutes_output() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let f = gaussian(&mut rng, 80, 3);
    let k = keys(80);
    let params = TsneParams { iterations: 300, perplexity: 20.0, ..TsneParams::default() };
    let base = tsne_embed(&f, &k, 9, &params).unwrap();
    let perm: Vec<usize> = (0..80).map(|i| (i * 37 + 11) % 80).collect();
    let pf: Vec<Vec<f64>> = perm.iter().map(|&i| f[i].clone()).collect();
    let pk: Vec<String> = perm.iter().map(|&i| k[i].clone()).collect();
    let moved = tsne_embed(&pf, &pk, 9, &params).unwrap();
    for (pos, &i) in perm.iter().enumerate() {
        assert_eq!(moved.coords[pos], base.coords[i]);
    }
    assert_eq!(moved.kl_trace, base.kl_trace);
}

#[test]
fn embed_rejects_key_mismatch() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let f = gaussian(&mut rng, 20, 2);
    let a = compute_affinities(&f, 5.0).unwrap();
    assert!(embed(&a, &keys(19), 1, &TsneParams::default()).is_err());
    let dup = vec!["a".to_string(); 20];
    assert!(tsne_embed(&f, &dup, 1, &TsneParams::default()).is_err());
}

fn coords_strategy() -> impl Strategy<Value = Vec<[f64; 2]>> {
    prop::collection::vec((-50.0..50.0f64, -50.0..50.0f64).prop_map(|(a, b)| [a, b]), 3..40)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn q_is_a_distribution(coords in coords_strategy()) {
        let q = q_matrix(&coords);
        prop_assert!((q.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(q.iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn kl_rigid_motion_invariant(seed in 0u64..1000, theta in 0.0..6.283f64, tx in -20.0..20.0f64, ty in -20.0..20.0f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = gaussian(&mut rng, 30, 3);
        let a = compute_affinities(&f, 8.0).unwrap();
        let coords: Vec<[f64; 2]> = (0..30).map(|_| [rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)]).collect();
        let (s, c) = theta.sin_cos();
        let moved: Vec<[f64; 2]> = coords.iter().map(|p| [c * p[0] - s * p[1] + tx, s * p[0] + c * p[1] + ty]).collect();
        let k0 = kl_divergence(&a, &coords);
        let k1 = kl_divergence(&a, &moved);
        prop_assert!((k0 - k1).abs() < 1e-10, "{} vs {}", k0, k1);
    }
}
