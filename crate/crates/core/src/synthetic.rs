//! Seeded leaderboard-like snapshots for demos and end-to-end tests.
//!
//! Scores follow a shared ability factor plus a saturating size trend, with
//! training-type and architecture shifts. TruthfulQA gets its own U-shaped size
//! trend and only a weak link to the shared factor.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};

const BENCHMARKS: [&str; 6] = ["ARC", "HellaSwag", "MMLU", "TruthfulQA", "Winogrande", "GSM8K"];

const ARCHS: [(&str, f64, f64); 11] = [
    ("LlamaForCausalLM", 0.54, 1.5),
    ("MistralForCausalLM", 0.15, 3.0),
    ("GPTNeoXForCausalLM", 0.06, -2.5),
    ("OPTForCausalLM", 0.05, -3.0),
    ("GPT2LMHeadModel", 0.04, -4.0),
    ("FalconForCausalLM", 0.04, 0.0),
    ("BloomForCausalLM", 0.03, -3.5),
    ("GPTJForCausalLM", 0.03, -1.5),
    ("RwkvForCausalLM", 0.02, -2.0),
    ("ChatGLMModel", 0.01, 0.5),
    ("PhiForCausalLM", 0.03, 1.0),
];

const TYPES: [(&str, f64, f64); 4] = [
    ("pretrained", 0.22, -6.0),
    ("fine-tuned", 0.43, 0.0),
    ("instruction-tuned", 0.25, 0.3),
    ("RL-tuned", 0.10, 1.0),
];

/// (lower, upper, share) of log-uniform parameter ranges in billions.
const SIZES: [(f64, f64, f64); 6] = [
    (0.07, 1.5, 0.16),
    (1.5, 3.0, 0.09),
    (3.0, 7.0, 0.32),
    (7.0, 13.0, 0.24),
    (13.0, 35.0, 0.11),
    (35.0, 180.0, 0.08),
];

fn pick<'a, T>(rng: &mut ChaCha20Rng, items: &'a [T], share: impl Fn(&T) -> f64) -> &'a T {
    let total: f64 = items.iter().map(&share).sum();
    let mut u = rng.gen::<f64>() * total;
    for it in items {
        u -= share(it);
        if u < 0.0 {
            return it;
        }
    }
    items.last().expect("non-empty")
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// CSV snapshot with `rows` models in the default six-benchmark layout.
pub fn synthetic_snapshot_csv(rows: usize, seed: u64) -> String {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["model", "params_b", "type", "architecture", "precision"];
    header.extend(BENCHMARKS);
    w.write_record(&header).expect("in-memory write");

    for i in 0..rows {
        let &(lo, hi, _) = pick(&mut rng, &SIZES, |s| s.2);
        let params = (lo.ln() + rng.gen::<f64>() * (hi.ln() - lo.ln())).exp();
        let lp = params.ln();
        let &(ty, _, ty_shift) = pick(&mut rng, &TYPES, |t| t.1);
        let &(arch, _, arch_shift) = pick(&mut rng, &ARCHS, |a| a.1);
        let ability = noise.sample(&mut rng);
        let size = logistic(0.9 * (lp - 1.8));

        let mut cells = vec![
            format!("synth-org-{}/model-{i:05}", i % 97),
            format!("{params:.3}"),
            ty.to_string(),
            arch.to_string(),
            if rng.gen_bool(0.5) { "float16" } else { "bfloat16" }.to_string(),
        ];
        for b in BENCHMARKS {
            let e = noise.sample(&mut rng);
            let score = match b {
                "ARC" => 28.0 + 38.0 * size + ty_shift + arch_shift + 4.0 * ability + 2.5 * e,
                "HellaSwag" => 32.0 + 55.0 * size + ty_shift + arch_shift + 3.5 * ability + 2.0 * e,
                "MMLU" => 25.0 + 45.0 * size + ty_shift + arch_shift + 5.0 * ability + 2.5 * e,
                "TruthfulQA" => {
                    39.0 + 0.9 * (lp - 0.7).powi(2) + 0.5 * ty_shift + 0.8 * ability + 4.0 * e
                }
                "Winogrande" => 52.0 + 30.0 * size + 0.7 * ty_shift + arch_shift + 3.0 * ability + 2.0 * e,
                _ => {
                    if params < 1.5 && rng.gen_bool(0.3) {
                        0.0
                    } else {
                        (2.0 + 55.0 * size * size + ty_shift + arch_shift + 6.0 * ability + 3.0 * e).max(0.3)
                    }
                }
            };
            let score = score.clamp(0.0, 100.0);
            if rng.gen_bool(0.01) {
                cells.push(String::new());
            } else {
                cells.push(format!("{score:.2}"));
            }
        }
        w.write_record(&cells).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8 csv")
}
