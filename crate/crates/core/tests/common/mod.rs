//! Brute-force reference implementations shared by integration tests.
//! Written independently of the library: no sorting, no shared helpers.

#![allow(dead_code)]

use plrsa::rdm::Rdm;
use plrsa::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_vec(len: usize, r: &mut ChaCha8Rng) -> Vec<f64> {
    (0..len).map(|_| r.random::<f64>()).collect()
}

pub fn uniform_tensor(shape: &[usize], r: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Average ranks by counting: `1 + #less + (#equal - 1) / 2`.
pub fn brute_ranks(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|&v| {
            let less = x.iter().filter(|&&w| w < v).count() as f64;
            let equal = x.iter().filter(|&&w| w == v).count() as f64;
            1.0 + less + (equal - 1.0) / 2.0
        })
        .collect()
}

pub fn brute_pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for i in 0..x.len() {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    sxy / (sxx * syy).sqrt()
}

pub fn brute_spearman(x: &[f64], y: &[f64]) -> f64 {
    brute_pearson(&brute_ranks(x), &brute_ranks(y))
}

/// First-order partial correlation of ranks from the closed-form formula.
pub fn brute_partial_spearman(x: &[f64], y: &[f64], z: &[f64]) -> f64 {
    let rxy = brute_spearman(x, y);
    let rxz = brute_spearman(x, z);
    let ryz = brute_spearman(y, z);
    (rxy - rxz * ryz) / ((1.0 - rxz * rxz) * (1.0 - ryz * ryz)).sqrt()
}

/// BH as "largest k with at least k p-values at or below k alpha / m".
pub fn brute_bh(p: &[f64], alpha: f64) -> Vec<bool> {
    let m = p.len();
    let mut kstar = 0;
    for k in 1..=m {
        let t = k as f64 * alpha / m as f64;
        if p.iter().filter(|&&v| v <= t).count() >= k {
            kstar = k;
        }
    }
    let t = kstar as f64 * alpha / m as f64;
    p.iter().map(|&v| kstar > 0 && v <= t).collect()
}

/// Row-major `i < j` entries via the public accessor.
pub fn brute_upper(r: &Rdm) -> Vec<f64> {
    let n = r.size();
    let mut out = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i < j {
                out.push(r.get(i, j));
            }
        }
    }
    out
}

/// Correlation distance computed entry by entry.
pub fn brute_corr_distance(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    rows.iter()
        .map(|a| rows.iter().map(|b| 1.0 - brute_pearson(a, b)).collect())
        .collect()
}

pub fn ids(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("s{i:03}")).collect()
}
