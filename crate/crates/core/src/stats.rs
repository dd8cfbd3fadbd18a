//! Rank correlation statistics for RSA.
//!
//! Every stochastic routine draws iteration `i` from its own seed-derived
//! stream, so results do not depend on evaluation order.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::rng;

/// Fractional (average) ranks starting at 1.
pub fn ranks(x: &[f64]) -> Result<Vec<f64>> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("cannot rank non-finite values".into()));
    }
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut out = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i + 1;
        while j < idx.len() && x[idx[j]] == x[idx[i]] {
            j += 1;
        }
        // positions i..j share the mean of ranks i+1..=j
        let r = (i + j + 1) as f64 / 2.0;
        for &k in &idx[i..j] {
            out[k] = r;
        }
        i = j;
    }
    Ok(out)
}

/// Centered copy scaled to unit norm, or `None` for a constant vector.
fn standardize(x: &[f64]) -> Option<Vec<f64>> {
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    let mut z: Vec<f64> = x.iter().map(|v| v - mean).collect();
    let norm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return None;
    }
    z.iter_mut().for_each(|v| *v /= norm);
    Some(z)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_pair(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::Input(format!("vector lengths differ: {} vs {}", x.len(), y.len())));
    }
    if x.len() < 3 {
        return Err(Error::Input(format!("correlation needs >= 3 values, got {}", x.len())));
    }
    Ok(())
}

/// Two-pass Pearson correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    let zx = standardize(x).ok_or_else(|| Error::Input("correlation undefined for a constant vector".into()))?;
    let zy = standardize(y).ok_or_else(|| Error::Input("correlation undefined for a constant vector".into()))?;
    Ok(dot(&zx, &zy).clamp(-1.0, 1.0))
}

pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    pearson(&ranks(x)?, &ranks(y)?)
}

/// Standardized rank vector; the Spearman correlation of two vectors is the
/// dot product of their `RankVector`s.
#[derive(Debug, Clone, PartialEq)]
pub struct RankVector(Vec<f64>);

impl RankVector {
    pub fn new(x: &[f64]) -> Result<Self> {
        if x.len() < 3 {
            return Err(Error::Input(format!("correlation needs >= 3 values, got {}", x.len())));
        }
        standardize(&ranks(x)?)
            .map(RankVector)
            .ok_or_else(|| Error::Input("correlation undefined for a constant vector".into()))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn rho(&self, other: &RankVector) -> f64 {
        dot(&self.0, &other.0).clamp(-1.0, 1.0)
    }
}

// ---------------------------------------------------------------- bootstrap

/// Linear-interpolation percentile (`q` in `[0, 1]`) of sorted data.
pub fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BootstrapCi {
    pub low: f64,
    pub high: f64,
    /// Resamples that came out constant and were drawn again.
    pub redrawn: usize,
}

/// Percentile bootstrap CI of Spearman's rho over resampled vector positions.
pub fn bootstrap_ci(model: &[f64], brain: &[f64], n_boot: usize, level: f64, seed: u64) -> Result<BootstrapCi> {
    check_pair(model, brain)?;
    if n_boot < 2 {
        return Err(Error::Config(format!("n_boot must be >= 2, got {n_boot}")));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Config(format!("confidence level must be in (0, 1), got {level}")));
    }
    let n = model.len();
    let cap = n_boot / 100;
    let mut redrawn = 0;
    let mut stats = Vec::with_capacity(n_boot);
    let (mut xs, mut ys) = (vec![0.0; n], vec![0.0; n]);
    for i in 0..n_boot {
        let mut r = rng::indexed_stream(seed, "bootstrap", i as u64);
        loop {
            for k in 0..n {
                let j = r.random_range(0..n);
                xs[k] = model[j];
                ys[k] = brain[j];
            }
            match spearman(&xs, &ys) {
                Ok(rho) => {
                    stats.push(rho);
                    break;
                }
                Err(_) => {
                    redrawn += 1;
                    if redrawn > cap {
                        return Err(Error::Numerical(format!(
                            "more than {cap} degenerate bootstrap resamples (1% of {n_boot})"
                        )));
                    }
                }
            }
        }
    }
    stats.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    Ok(BootstrapCi {
        low: percentile_sorted(&stats, tail),
        high: percentile_sorted(&stats, 1.0 - tail),
        redrawn,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RsaResult {
    pub rho: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_pairs: usize,
}

/// Spearman rho with its bootstrap CI.
pub fn rsa(model: &[f64], brain: &[f64], n_boot: usize, level: f64, seed: u64) -> Result<RsaResult> {
    let rho = spearman(model, brain)?;
    let ci = bootstrap_ci(model, brain, n_boot, level, seed)?;
    Ok(RsaResult {
        rho,
        ci_low: ci.low,
        ci_high: ci.high,
        n_pairs: model.len(),
    })
}

// ---------------------------------------------------------------- permutation

/// Null distributions of rho for several models against one brain vector.
/// Every model sees the same `n_perm` shuffles of the brain ranks; shuffles
/// are regenerated on demand rather than stored.
#[derive(Debug, Clone)]
pub struct PermutationNull {
    brain: RankVector,
    n_perm: usize,
    seed: u64,
}

impl PermutationNull {
    pub fn new(brain: &[f64], n_perm: usize, seed: u64) -> Result<Self> {
        if n_perm < 1 {
            return Err(Error::Config("n_perm must be >= 1".into()));
        }
        Ok(PermutationNull {
            brain: RankVector::new(brain)?,
            n_perm,
            seed,
        })
    }

    pub fn n_perm(&self) -> usize {
        self.n_perm
    }

    /// For each model: observed rho and rho under each shuffle.
    pub fn rhos(&self, models: &[&RankVector]) -> Result<Vec<(f64, Vec<f64>)>> {
        if let Some(m) = models.iter().find(|m| m.len() != self.brain.len()) {
            return Err(Error::Input(format!(
                "model vector has {} entries, brain has {}",
                m.len(),
                self.brain.len()
            )));
        }
        let mut out: Vec<(f64, Vec<f64>)> = models
            .iter()
            .map(|m| (m.rho(&self.brain), Vec::with_capacity(self.n_perm)))
            .collect();
        let mut v = self.brain.0.clone();
        for k in 0..self.n_perm {
            v.copy_from_slice(&self.brain.0);
            v.shuffle(&mut rng::indexed_stream(self.seed, "permutation", k as u64));
            for (m, (_, null)) in models.iter().zip(out.iter_mut()) {
                null.push(dot(&m.0, &v).clamp(-1.0, 1.0));
            }
        }
        Ok(out)
    }
}

/// One-sided p-value `(b + 1) / (N + 1)` of an observed rho against its null.
pub fn null_p_value(obs: f64, null: &[f64]) -> f64 {
    let b = null.iter().filter(|&&v| v >= obs).count();
    (b + 1) as f64 / (null.len() + 1) as f64
}

/// Two-sided p-value `(b + 1) / (N + 1)` for `delta = rho_a - rho_b`.
pub fn delta_p_value(obs_a: f64, null_a: &[f64], obs_b: f64, null_b: &[f64]) -> (f64, f64) {
    let delta = obs_a - obs_b;
    let b = null_a
        .iter()
        .zip(null_b)
        .filter(|(a, b)| (*a - *b).abs() >= delta.abs())
        .count();
    (delta, (b + 1) as f64 / (null_a.len() + 1) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairwiseTest {
    pub condition_a: String,
    pub condition_b: String,
    pub delta_rho: f64,
    pub p_value: f64,
    pub fdr_significant: bool,
}

/// Permutation test of `rho(A, brain) - rho(B, brain)`; each shuffle of the
/// brain vector is applied to both models.
pub fn permutation_test(
    model_a: &[f64],
    model_b: &[f64],
    brain: &[f64],
    n_perm: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    check_pair(model_a, brain)?;
    check_pair(model_b, brain)?;
    let null = PermutationNull::new(brain, n_perm, seed)?;
    let (a, b) = (RankVector::new(model_a)?, RankVector::new(model_b)?);
    let r = null.rhos(&[&a, &b])?;
    Ok(delta_p_value(r[0].0, &r[0].1, r[1].0, &r[1].1))
}

// ---------------------------------------------------------------- FDR

/// Benjamini-Hochberg step-up; flags in input order.
pub fn fdr_bh(p_values: &[f64], alpha: f64) -> Result<Vec<bool>> {
    if let Some(p) = p_values.iter().find(|p| !(**p > 0.0 && **p <= 1.0)) {
        return Err(Error::Input(format!("p-value {p} outside (0, 1]")));
    }
    let m = p_values.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p_values[a].total_cmp(&p_values[b]));
    let k = (1..=m)
        .rev()
        .find(|&k| p_values[order[k - 1]] <= k as f64 * alpha / m as f64)
        .unwrap_or(0);
    let mut flags = vec![false; m];
    for &i in &order[..k] {
        flags[i] = true;
    }
    Ok(flags)
}

// ---------------------------------------------------------------- partial

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PartialRsa {
    pub rho: f64,
    /// A residual vanished (the control explains a vector completely); rho is set to 0.
    pub degenerate: bool,
}

fn residualize(y: &[f64], x: &[f64]) -> Vec<f64> {
    let n = y.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let beta = sxy / sxx;
    y.iter().zip(x).map(|(b, a)| (b - my) - beta * (a - mx)).collect()
}

/// Spearman correlation of model and brain after regressing the control
/// ranks out of both rank vectors.
pub fn partial_spearman(model: &[f64], brain: &[f64], control: &[f64]) -> Result<PartialRsa> {
    check_pair(model, brain)?;
    check_pair(model, control)?;
    let rc = ranks(control)?;
    if standardize(&rc).is_none() {
        log::warn!("constant control vector, partial RSA falls back to plain Spearman");
        return Ok(PartialRsa {
            rho: spearman(model, brain)?,
            degenerate: false,
        });
    }
    let (rm, rb) = (ranks(model)?, ranks(brain)?);
    let (em, eb) = (residualize(&rm, &rc), residualize(&rb, &rc));
    let scale = |r: &[f64]| r.iter().map(|v| v * v).sum::<f64>().sqrt();
    // residual below rounding level relative to the rank spread
    let tiny = |e: &[f64], r: &[f64]| {
        let n = r.len() as f64;
        let m = r.iter().sum::<f64>() / n;
        let spread = r.iter().map(|v| (v - m) * (v - m)).sum::<f64>().sqrt();
        scale(e) <= 1e-9 * spread
    };
    if tiny(&em, &rm) || tiny(&eb, &rb) {
        return Ok(PartialRsa {
            rho: 0.0,
            degenerate: true,
        });
    }
    Ok(PartialRsa {
        rho: pearson(&em, &eb)?,
        degenerate: false,
    })
}

// ---------------------------------------------------------------- noise ceiling

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NoiseCeiling {
    pub lower: f64,
    pub upper: f64,
    pub n_splits: usize,
}

pub fn spearman_brown(r: f64) -> f64 {
    2.0 * r / (1.0 + r)
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn go(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            if n - i < k - cur.len() {
                break;
            }
            cur.push(i);
            go(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    go(0, n, k, &mut Vec::new(), &mut out);
    out
}

fn mean_vec(rows: &[&Vec<f64>]) -> Vec<f64> {
    let mut m = vec![0.0; rows[0].len()];
    for r in rows {
        for (a, b) in m.iter_mut().zip(r.iter()) {
            *a += b;
        }
    }
    let k = rows.len() as f64;
    m.iter_mut().for_each(|v| *v /= k);
    m
}

/// Split-half reliability of subject RDM vectors.
///
/// The first half has `ceil(S/2)` subjects. All distinct splits are used when
/// there are at most `n_splits`, otherwise `n_splits` random ones. `lower` is
/// the mean split-half rho and `upper` the mean Spearman-Brown corrected rho;
/// if negative reliabilities invert that order the two are swapped so that
/// `lower <= upper` holds.
pub fn noise_ceiling(subjects: &[Vec<f64>], n_splits: usize, seed: u64) -> Result<NoiseCeiling> {
    let s = subjects.len();
    if s < 2 {
        return Err(Error::Input(format!("noise ceiling needs >= 2 subjects, got {s}")));
    }
    if n_splits < 1 {
        return Err(Error::Config("n_splits must be >= 1".into()));
    }
    let len = subjects[0].len();
    if subjects.iter().any(|v| v.len() != len) {
        return Err(Error::Input("subject RDM vectors differ in length".into()));
    }
    let half = s.div_ceil(2);
    let mut all = combinations(s, half);
    if s % 2 == 0 {
        // A|B and B|A are the same split
        all.retain(|c| c[0] == 0);
    }
    let splits: Vec<Vec<usize>> = if all.len() <= n_splits {
        all
    } else {
        (0..n_splits)
            .map(|i| {
                let mut idx: Vec<usize> = (0..s).collect();
                idx.shuffle(&mut rng::indexed_stream(seed, "noise-ceiling", i as u64));
                let mut a = idx[..half].to_vec();
                a.sort_unstable();
                a
            })
            .collect()
    };
    let (mut sum_r, mut sum_sb) = (0.0, 0.0);
    for a in &splits {
        let first: Vec<&Vec<f64>> = a.iter().map(|&i| &subjects[i]).collect();
        let second: Vec<&Vec<f64>> = (0..s).filter(|i| !a.contains(i)).map(|i| &subjects[i]).collect();
        let r = spearman(&mean_vec(&first), &mean_vec(&second))?;
        sum_r += r;
        sum_sb += spearman_brown(r).clamp(-1.0, 1.0);
    }
    let k = splits.len() as f64;
    let (r, sb) = ((sum_r / k).clamp(-1.0, 1.0), (sum_sb / k).clamp(-1.0, 1.0));
    Ok(NoiseCeiling {
        lower: r.min(sb),
        upper: r.max(sb),
        n_splits: splits.len(),
    })
}

// ---------------------------------------------------------------- effect size

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CohensD {
    pub d: f64,
    /// Differences have zero spread; `d` is `+-inf` (or 0 for a zero mean).
    pub degenerate: bool,
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Sample standard deviation (`n - 1` denominator).
pub fn sample_sd(x: &[f64]) -> f64 {
    let m = mean(x);
    (x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() as f64 - 1.0)).sqrt()
}

/// Paired Cohen's d: mean over sd of the per-subject differences.
pub fn cohens_d_paired(a: &[f64], b: &[f64]) -> Result<CohensD> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::Input(format!(
            "paired effect size needs two equal lists of >= 2 scores, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let (m, sd) = (mean(&diff), sample_sd(&diff));
    if sd == 0.0 {
        let d = if m == 0.0 { 0.0 } else { m.signum() * f64::INFINITY };
        return Ok(CohensD { d, degenerate: true });
    }
    Ok(CohensD {
        d: m / sd,
        degenerate: false,
    })
}

// ---------------------------------------------------------------- KS

/// Kolmogorov-Smirnov distance of a sample from Uniform(0, 1).
pub fn ks_uniform(sample: &[f64]) -> f64 {
    let mut s = sample.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(i, &v)| {
            let v = v.clamp(0.0, 1.0);
            ((i + 1) as f64 / n - v).max(v - i as f64 / n)
        })
        .fold(0.0, f64::max)
}

/// Asymptotic Kolmogorov survival function `Q(lambda)`.
fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for j in 1..=100 {
        let t = 2.0 * (-1f64).powi(j - 1) * (-2.0 * (j as f64 * lambda).powi(2)).exp();
        sum += t;
        if t.abs() < 1e-16 {
            break;
        }
    }
    sum.clamp(0.0, 1.0)
}

/// Two-sample KS distance and asymptotic p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> (f64, f64) {
    let (mut x, mut y) = (a.to_vec(), b.to_vec());
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    let (n, m) = (x.len() as f64, y.len() as f64);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < x.len() && j < y.len() {
        let v = x[i].min(y[j]);
        while i < x.len() && x[i] <= v {
            i += 1;
        }
        while j < y.len() && y[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    let ne = (n * m / (n + m)).sqrt();
    (d, kolmogorov_q((ne + 0.12 + 0.11 / ne) * d))
}
