//! Exact t-SNE for small point sets (a few thousand rows at most).

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TsneError {
    #[error("perplexity {perplexity} is too large for {n} points")]
    PerplexityTooLarge { perplexity: f64, n: usize },
    #[error("all pairwise distances are zero")]
    DegenerateDistances,
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("embedding diverged at iteration {0}")]
    NumericalOverflow(usize),
}

pub type Result<T> = std::result::Result<T, TsneError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TsneParams {
    pub perplexity: f64,
    pub iterations: usize,
    pub early_exaggeration: f64,
    pub exaggeration_iters: usize,
    pub learning_rate: f64,
    pub momentum_initial: f64,
    pub momentum_final: f64,
    /// Iteration at which momentum switches to its final value.
    pub momentum_switch: usize,
    /// Standard deviation of the Gaussian initialization.
    pub init_sd: f64,
}

impl Default for TsneParams {
    fn default() -> Self {
        Self {
            perplexity: 30.0,
            iterations: 1000,
            early_exaggeration: 12.0,
            exaggeration_iters: 250,
            learning_rate: 200.0,
            momentum_initial: 0.5,
            momentum_final: 0.8,
            momentum_switch: 250,
            init_sd: 1e-4,
        }
    }
}

/// Symmetric joint affinities, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityMatrix {
    pub n: usize,
    pub p: Vec<f64>,
    pub target_perplexity: f64,
    /// Gaussian precision per row, in units of 1 / squared distance.
    pub betas: Vec<f64>,
}

impl AffinityMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.p[i * self.n + j]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub keys: Vec<String>,
    pub coords: Vec<[f64; 2]>,
    pub seed: u64,
    /// (iteration, KL(P‖Q)) with the unexaggerated P.
    pub kl_trace: Vec<(usize, f64)>,
    pub hyperparams: TsneParams,
}

impl Embedding {
    pub fn final_kl(&self) -> f64 {
        self.kl_trace.last().map(|t| t.1).unwrap_or(f64::NAN)
    }

    pub fn kl_at(&self, iteration: usize) -> Option<f64> {
        self.kl_trace.iter().find(|t| t.0 == iteration).map(|t| t.1)
    }
}

const PERPLEXITY_TOL_BITS: f64 = 1e-5;
const MAX_BISECTION: usize = 64;

fn squared_distances(features: &[Vec<f64>]) -> Vec<f64> {
    let n = features.len();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let s: f64 = features[i].iter().zip(&features[j]).map(|(a, b)| (a - b) * (a - b)).sum();
            d[i * n + j] = s;
            d[j * n + i] = s;
        }
    }
    d
}

/// Conditional row `p_{.|i}` for precision `beta`; returns its entropy in bits.
fn conditional_row(d: &[f64], i: usize, beta: f64, out: &mut [f64]) -> f64 {
    let n = out.len();
    let dmin = (0..n).filter(|&j| j != i).map(|j| d[j]).fold(f64::INFINITY, f64::min);
    let mut z = 0.0;
    let mut wd = 0.0;
    for j in 0..n {
        if j == i {
            out[j] = 0.0;
            continue;
        }
        let shifted = d[j] - dmin;
        let e = (-beta * shifted).exp();
        out[j] = e;
        z += e;
        wd += e * shifted;
    }
    for v in out.iter_mut() {
        *v /= z;
    }
    (z.ln() + beta * wd / z) / std::f64::consts::LN_2
}

/// Entropy in bits of the conditional distribution of row `i` at precision `beta`.
pub fn row_entropy_bits(features: &[Vec<f64>], i: usize, beta: f64) -> f64 {
    let n = features.len();
    let d: Vec<f64> = (0..n)
        .map(|j| features[i].iter().zip(&features[j]).map(|(a, b)| (a - b) * (a - b)).sum())
        .collect();
    let mut row = vec![0.0; n];
    conditional_row(&d, i, beta, &mut row)
}

fn check_features(features: &[Vec<f64>]) -> Result<usize> {
    let d = features.first().map(|r| r.len()).unwrap_or(0);
    if d == 0 {
        return Err(TsneError::InvalidInput("need at least one feature column".into()));
    }
    for (i, r) in features.iter().enumerate() {
        if r.len() != d {
            return Err(TsneError::InvalidInput(format!("row {i} has {} features, expected {d}", r.len())));
        }
        if r.iter().any(|v| !v.is_finite()) {
            return Err(TsneError::InvalidInput(format!("row {i} has a non-finite feature")));
        }
    }
    Ok(d)
}

pub fn compute_affinities(features: &[Vec<f64>], perplexity: f64) -> Result<AffinityMatrix> {
    let n = features.len();
    check_features(features)?;
    if !(perplexity > 1.0) || perplexity > (n as f64 - 1.0) {
        return Err(TsneError::PerplexityTooLarge { perplexity, n });
    }
    if (n as f64) < 3.0 * perplexity {
        log::warn!("t-SNE with {n} points and perplexity {perplexity}: fewer than 3 points per unit perplexity");
    }
    let d = squared_distances(features);
    if d.iter().all(|&v| v == 0.0) {
        return Err(TsneError::DegenerateDistances);
    }
    let target = perplexity.log2();
    let mut cond = vec![0.0; n * n];
    let mut betas = vec![0.0; n];
    for i in 0..n {
        let row = &d[i * n..(i + 1) * n];
        // Bisection on ln beta, relative to the row's mean distance so the bracket is scale free.
        let mean = row.iter().sum::<f64>() / (n - 1) as f64;
        let scale = if mean > 0.0 { 1.0 / mean } else { 1.0 };
        let (mut lo, mut hi) = (-40.0_f64, 40.0_f64);
        let out = &mut cond[i * n..(i + 1) * n];
        let mut beta = scale;
        for _ in 0..MAX_BISECTION {
            let mid = 0.5 * (lo + hi);
            beta = scale * mid.exp();
            let h = conditional_row(row, i, beta, out);
            if (h - target).abs() < PERPLEXITY_TOL_BITS {
                break;
            }
            // Entropy falls as beta grows.
            if h > target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        betas[i] = beta;
    }
    let mut p = vec![0.0; n * n];
    let denom = 2.0 * n as f64;
    for i in 0..n {
        for j in (i + 1)..n {
            let v = (cond[i * n + j] + cond[j * n + i]) / denom;
            p[i * n + j] = v;
            p[j * n + i] = v;
        }
    }
    Ok(AffinityMatrix { n, p, target_perplexity: perplexity, betas })
}

/// Student-t kernel weights and their sum.
fn kernel(coords: &[[f64; 2]], num: &mut [f64]) -> f64 {
    let n = coords.len();
    let mut z = 0.0;
    for i in 0..n {
        num[i * n + i] = 0.0;
        for j in (i + 1)..n {
            let dx = coords[i][0] - coords[j][0];
            let dy = coords[i][1] - coords[j][1];
            let w = 1.0 / (1.0 + dx * dx + dy * dy);
            num[i * n + j] = w;
            num[j * n + i] = w;
            z += 2.0 * w;
        }
    }
    z
}

/// Low-dimensional joint distribution Q for the given coordinates.
pub fn q_matrix(coords: &[[f64; 2]]) -> Vec<f64> {
    let n = coords.len();
    let mut num = vec![0.0; n * n];
    let z = kernel(coords, &mut num);
    num.iter().map(|w| w / z).collect()
}

pub fn kl_divergence(p: &AffinityMatrix, coords: &[[f64; 2]]) -> f64 {
    let n = p.n;
    let mut num = vec![0.0; n * n];
    let z = kernel(coords, &mut num);
    kl_from_kernel(&p.p, &num, z)
}

fn kl_from_kernel(p: &[f64], num: &[f64], z: f64) -> f64 {
    let mut kl = 0.0;
    for (pij, w) in p.iter().zip(num) {
        if *pij > 0.0 {
            let q = (w / z).max(f64::MIN_POSITIVE);
            kl += pij * (pij / q).ln();
        }
    }
    kl
}

fn fnv1a(seed: u64, key: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in seed.to_le_bytes().iter().chain(key.as_bytes()) {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Initial coordinates: each point draws from its own stream keyed by (seed, key).
pub fn initial_coords(keys: &[String], seed: u64, sd: f64) -> Vec<[f64; 2]> {
    let normal = Normal::new(0.0, sd).expect("positive sd");
    keys.iter()
        .map(|k| {
            let mut rng = ChaCha20Rng::seed_from_u64(fnv1a(seed, k));
            [normal.sample(&mut rng), normal.sample(&mut rng)]
        })
        .collect()
}

/// Gradient descent on KL(P‖Q) from the keyed initialization.
pub fn embed(p: &AffinityMatrix, keys: &[String], seed: u64, params: &TsneParams) -> Result<Embedding> {
    let n = p.n;
    if keys.len() != n {
        return Err(TsneError::InvalidInput(format!("{} keys for {n} points", keys.len())));
    }
    if !(params.learning_rate > 0.0) || params.iterations == 0 || !(params.early_exaggeration >= 1.0) {
        return Err(TsneError::InvalidInput("learning rate, iterations and exaggeration must be positive".into()));
    }
    let mut y = initial_coords(keys, seed, params.init_sd);
    let mut update = vec![[0.0; 2]; n];
    let mut gains = vec![[1.0_f64; 2]; n];
    let mut num = vec![0.0; n * n];
    let mut grad = vec![[0.0; 2]; n];
    let mut trace = Vec::new();

    for it in 1..=params.iterations {
        let exag = if it <= params.exaggeration_iters { params.early_exaggeration } else { 1.0 };
        let momentum = if it <= params.momentum_switch { params.momentum_initial } else { params.momentum_final };
        let z = kernel(&y, &mut num);
        for g in grad.iter_mut() {
            *g = [0.0; 2];
        }
        for i in 0..n {
            let (mut gx, mut gy) = (0.0, 0.0);
            for j in 0..n {
                if i == j {
                    continue;
                }
                let w = num[i * n + j];
                let m = (exag * p.p[i * n + j] - w / z) * w;
                gx += m * (y[i][0] - y[j][0]);
                gy += m * (y[i][1] - y[j][1]);
            }
            grad[i] = [4.0 * gx, 4.0 * gy];
        }
        for i in 0..n {
            for c in 0..2 {
                let g = grad[i][c];
                gains[i][c] = if (g > 0.0) != (update[i][c] > 0.0) {
                    gains[i][c] + 0.2
                } else {
                    (gains[i][c] * 0.8).max(0.01)
                };
                update[i][c] = momentum * update[i][c] - params.learning_rate * gains[i][c] * g;
                y[i][c] += update[i][c];
            }
        }
        let mut mean = [0.0; 2];
        for r in &y {
            mean[0] += r[0];
            mean[1] += r[1];
        }
        for r in y.iter_mut() {
            r[0] -= mean[0] / n as f64;
            r[1] -= mean[1] / n as f64;
        }
        if y.iter().any(|r| !r[0].is_finite() || !r[1].is_finite()) {
            return Err(TsneError::NumericalOverflow(it));
        }
        if it % 50 == 0 || it == params.exaggeration_iters || it == params.iterations {
            trace.push((it, kl_divergence(p, &y)));
        }
    }
    Ok(Embedding { keys: keys.to_vec(), coords: y, seed, kl_trace: trace, hyperparams: params.clone() })
}

/// Affinities plus embedding, computed in sorted key order so that the result
/// does not depend on the order of the input rows. Output rows follow the input.
pub fn tsne_embed(features: &[Vec<f64>], keys: &[String], seed: u64, params: &TsneParams) -> Result<Embedding> {
    if keys.len() != features.len() {
        return Err(TsneError::InvalidInput(format!("{} keys for {} rows", keys.len(), features.len())));
    }
    let mut order: Vec<usize> = (0..keys.len()).collect();
    order.sort_by(|&a, &b| keys[a].cmp(&keys[b]));
    if order.windows(2).any(|w| keys[w[0]] == keys[w[1]]) {
        return Err(TsneError::InvalidInput("keys must be unique".into()));
    }
    let sorted_features: Vec<Vec<f64>> = order.iter().map(|&i| features[i].clone()).collect();
    let sorted_keys: Vec<String> = order.iter().map(|&i| keys[i].clone()).collect();
    let aff = compute_affinities(&sorted_features, params.perplexity)?;
    let emb = embed(&aff, &sorted_keys, seed, params)?;
    let mut coords = vec![[0.0; 2]; keys.len()];
    for (pos, &i) in order.iter().enumerate() {
        coords[i] = emb.coords[pos];
    }
    Ok(Embedding { keys: keys.to_vec(), coords, ..emb })
}

fn neighbours(coords: &[[f64; 2]], i: usize, k: usize) -> Vec<usize> {
    let mut d: Vec<(f64, usize)> = coords
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != i)
        .map(|(j, c)| ((c[0] - coords[i][0]).powi(2) + (c[1] - coords[i][1]).powi(2), j))
        .collect();
    d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    d.into_iter().take(k).map(|t| t.1).collect()
}

/// Mean share of each point's k nearest neighbours that carry its own label.
pub fn knn_agreement<L: PartialEq>(coords: &[[f64; 2]], labels: &[L], k: usize) -> f64 {
    let n = coords.len();
    if n < 2 {
        return f64::NAN;
    }
    let mut total = 0.0;
    for i in 0..n {
        let nb = neighbours(coords, i, k);
        let same = nb.iter().filter(|&&j| labels[j] == labels[i]).count();
        total += same as f64 / nb.len() as f64;
    }
    total / n as f64
}

/// Share of points labelled `target` whose k-NN majority label is also `target`.
pub fn knn_majority<L: Ord + Clone>(coords: &[[f64; 2]], labels: &[L], target: &L, k: usize) -> f64 {
    let members: Vec<usize> = (0..coords.len()).filter(|&i| &labels[i] == target).collect();
    if members.is_empty() {
        return f64::NAN;
    }
    let mut hits = 0usize;
    for &i in &members {
        let mut counts: BTreeMap<&L, usize> = BTreeMap::new();
        for j in neighbours(coords, i, k) {
            *counts.entry(&labels[j]).or_default() += 1;
        }
        let own = counts.get(target).copied().unwrap_or(0);
        if counts.iter().all(|(l, c)| *l == target || *c < own) {
            hits += 1;
        }
    }
    hits as f64 / members.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equidistant_triangle_is_uniform() {
        let s = 3f64.sqrt() / 2.0;
        let f = vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.5, s]];
        let a = compute_affinities(&f, 2.0).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 0.0 } else { 1.0 / 6.0 };
                assert!((a.get(i, j) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn perplexity_bounds() {
        let f: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64]).collect();
        assert!(matches!(compute_affinities(&f, 5.0), Err(TsneError::PerplexityTooLarge { .. })));
        assert!(matches!(compute_affinities(&f, 1.0), Err(TsneError::PerplexityTooLarge { .. })));
        let same = vec![vec![1.0]; 5];
        assert_eq!(compute_affinities(&same, 2.0), Err(TsneError::DegenerateDistances));
    }

    #[test]
    fn duplicates_stay_finite() {
        let mut f: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64, (i * i) as f64 * 0.1]).collect();
        f.push(f[3].clone());
        f.push(f[3].clone());
        let a = compute_affinities(&f, 5.0).unwrap();
        assert!(a.p.iter().all(|v| v.is_finite() && *v >= 0.0));
        assert!((a.p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn knn_helpers() {
        let coords = vec![[0.0, 0.0], [0.1, 0.0], [0.0, 0.1], [5.0, 5.0], [5.1, 5.0], [5.0, 5.1]];
        let labels = ["a", "a", "a", "b", "b", "b"];
        assert_eq!(knn_agreement(&coords, &labels, 2), 1.0);
        assert_eq!(knn_majority(&coords, &labels, &"a", 2), 1.0);
    }
}
