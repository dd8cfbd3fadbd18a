use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

pub const BN_MOMENTUM: f64 = 0.1;
/// The untrained-statistics warning is printed once per process.
static UNTRAINED_WARNED: std::sync::atomic::AtomicBool = std::sync::atomic::AtomicBool::new(false);

pub const BN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Eval,
}

/// Running mean/variance per channel. `updates` counts train-mode steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub updates: u64,
}

impl RunningStats {
    pub fn new(channels: usize) -> Self {
        RunningStats {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
            updates: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BatchNormCache {
    pub mode: BnMode,
    pub x_hat: Tensor,
    pub inv_std: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct BatchNormGrads {
    pub input: Tensor,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

/// `(batch, channels, spatial)` for a tensor laid out `[B, C, ...]`.
fn layout(input: &Tensor, channels: usize) -> Result<(usize, usize)> {
    let shape = input.shape();
    if shape.len() < 2 || shape[1] != channels {
        return Err(Error::Config(format!(
            "batchnorm: input shape {:?} does not have {} channels",
            shape, channels
        )));
    }
    Ok((shape[0], shape[2..].iter().product()))
}

/// Per-channel normalization over batch and spatial positions.
///
/// Train mode normalizes with biased batch statistics and folds the unbiased
/// batch variance into `stats`. Eval mode uses `stats` as-is.
pub fn batchnorm_forward(
    input: &Tensor,
    gamma: &[f64],
    beta: &[f64],
    stats: &mut RunningStats,
    mode: BnMode,
) -> Result<(Tensor, BatchNormCache)> {
    let c = gamma.len();
    if beta.len() != c || stats.mean.len() != c {
        return Err(Error::Config("batchnorm: parameter lengths disagree".into()));
    }
    let (b, sp) = layout(input, c)?;
    let n = b * sp;
    let x = input.data();
    let (mean, var) = match mode {
        BnMode::Train => {
            if n < 2 {
                return Err(Error::Config("batchnorm train mode needs at least 2 values per channel".into()));
            }
            let mut mean = vec![0.0; c];
            let mut var = vec![0.0; c];
            for ch in 0..c {
                let mut s = 0.0;
                for bi in 0..b {
                    let base = (bi * c + ch) * sp;
                    s += x[base..base + sp].iter().sum::<f64>();
                }
                let m = s / n as f64;
                let mut ss = 0.0;
                for bi in 0..b {
                    let base = (bi * c + ch) * sp;
                    ss += x[base..base + sp].iter().map(|v| (v - m) * (v - m)).sum::<f64>();
                }
                mean[ch] = m;
                var[ch] = ss / n as f64;
                let unbiased = ss / (n - 1) as f64;
                stats.mean[ch] = (1.0 - BN_MOMENTUM) * stats.mean[ch] + BN_MOMENTUM * m;
                stats.var[ch] = (1.0 - BN_MOMENTUM) * stats.var[ch] + BN_MOMENTUM * unbiased;
            }
            stats.updates += 1;
            (mean, var)
        }
        BnMode::Eval => {
            if stats.updates == 0 && !UNTRAINED_WARNED.swap(true, std::sync::atomic::Ordering::Relaxed) {
                log::warn!("batchnorm evaluated before any training step; using initial statistics (mean 0, var 1)");
            }
            (stats.mean.clone(), stats.var.clone())
        }
    };
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
    let mut x_hat = Tensor::zeros(input.shape());
    let mut out = Tensor::zeros(input.shape());
    {
        let xh = x_hat.data_mut();
        let y = out.data_mut();
        for bi in 0..b {
            for ch in 0..c {
                let base = (bi * c + ch) * sp;
                for i in base..base + sp {
                    let h = (x[i] - mean[ch]) * inv_std[ch];
                    xh[i] = h;
                    y[i] = gamma[ch] * h + beta[ch];
                }
            }
        }
    }
    Ok((out, BatchNormCache { mode, x_hat, inv_std }))
}

pub fn batchnorm_backward(grad_out: &Tensor, gamma: &[f64], cache: &BatchNormCache) -> Result<BatchNormGrads> {
    let c = gamma.len();
    if grad_out.shape() != cache.x_hat.shape() {
        return Err(Error::Config(format!(
            "batchnorm backward: grad shape {:?}, forward shape {:?}",
            grad_out.shape(),
            cache.x_hat.shape()
        )));
    }
    let (b, sp) = layout(grad_out, c)?;
    let n = (b * sp) as f64;
    let g = grad_out.data();
    let xh = cache.x_hat.data();
    let mut dgamma = vec![0.0; c];
    let mut dbeta = vec![0.0; c];
    for bi in 0..b {
        for ch in 0..c {
            let base = (bi * c + ch) * sp;
            for i in base..base + sp {
                dgamma[ch] += g[i] * xh[i];
                dbeta[ch] += g[i];
            }
        }
    }
    let mut gin = Tensor::zeros(grad_out.shape());
    let gx = gin.data_mut();
    for bi in 0..b {
        for ch in 0..c {
            let base = (bi * c + ch) * sp;
            let k = gamma[ch] * cache.inv_std[ch];
            match cache.mode {
                BnMode::Train => {
                    for i in base..base + sp {
                        gx[i] = k * (g[i] - dbeta[ch] / n - xh[i] * dgamma[ch] / n);
                    }
                }
                BnMode::Eval => {
                    for i in base..base + sp {
                        gx[i] = k * g[i];
                    }
                }
            }
        }
    }
    Ok(BatchNormGrads {
        input: gin,
        gamma: dgamma,
        beta: dbeta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{rand_tensor, rel_err};

    fn channel_moments(t: &Tensor, ch: usize) -> (f64, f64) {
        let [b, c, h, w] = t.dims4("t").unwrap();
        let vals: Vec<f64> = (0..b)
            .flat_map(|bi| t.data()[(bi * c + ch) * h * w..(bi * c + ch + 1) * h * w].to_vec())
            .collect();
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        let v = vals.iter().map(|x| (x - m).powi(2)).sum::<f64>() / vals.len() as f64;
        (m, v)
    }

    #[test]
    fn train_mode_standardizes() {
        let x = rand_tensor(&[4, 3, 5, 5], 1).map(|v| 3.0 * v + 2.0);
        let mut st = RunningStats::new(3);
        let (y, _) = batchnorm_forward(&x, &[1.0; 3], &[0.0; 3], &mut st, BnMode::Train).unwrap();
        for ch in 0..3 {
            let (m, v) = channel_moments(&y, ch);
            assert!(m.abs() < 1e-6);
            // eps shrinks the variance slightly below 1
            assert!((v - 1.0).abs() < 1e-4, "{v}");
        }
        assert_eq!(st.updates, 1);
        assert!(st.mean.iter().all(|m| m.abs() > 0.0));
    }

    #[test]
    fn zero_gamma_outputs_beta() {
        let x = rand_tensor(&[2, 2, 3, 3], 2);
        let mut st = RunningStats::new(2);
        let (y, _) = batchnorm_forward(&x, &[0.0, 0.0], &[0.3, -0.7], &mut st, BnMode::Train).unwrap();
        for (i, v) in y.data().iter().enumerate() {
            assert_eq!(*v, if (i / 9) % 2 == 0 { 0.3 } else { -0.7 });
        }
    }

    #[test]
    fn eval_before_training_uses_initial_stats() {
        let x = rand_tensor(&[1, 2, 2, 2], 3);
        let mut st = RunningStats::new(2);
        let (y, _) = batchnorm_forward(&x, &[1.0; 2], &[0.0; 2], &mut st, BnMode::Eval).unwrap();
        let k = 1.0 / (1.0 + BN_EPS).sqrt();
        assert!(y.data().iter().zip(x.data()).all(|(a, b)| (a - k * b).abs() < 1e-15));
        assert_eq!(st, RunningStats::new(2));
    }

    #[test]
    fn running_stats_momentum() {
        let x = Tensor::from_vec(&[2, 1], vec![1.0, 3.0]).unwrap();
        let mut st = RunningStats::new(1);
        batchnorm_forward(&x, &[1.0], &[0.0], &mut st, BnMode::Train).unwrap();
        assert!((st.mean[0] - 0.2).abs() < 1e-15);
        // unbiased batch variance is 2
        assert!((st.var[0] - (0.9 + 0.2)).abs() < 1e-15);
    }

    fn fd_check(mode: BnMode, shape: &[usize], seed: u64) {
        let c = shape[1];
        let x = rand_tensor(shape, seed);
        let gamma: Vec<f64> = rand_tensor(&[c], seed + 1).data().iter().map(|v| v + 1.5).collect();
        let beta = rand_tensor(&[c], seed + 2).into_data();
        let mut warm = RunningStats::new(c);
        batchnorm_forward(&rand_tensor(shape, seed + 9), &gamma, &beta, &mut warm, BnMode::Train).unwrap();
        let r = rand_tensor(shape, seed + 3);
        let loss = |x: &Tensor, g: &[f64], b: &[f64]| {
            let mut st = warm.clone();
            batchnorm_forward(x, g, b, &mut st, mode).unwrap().0.dot(&r).unwrap()
        };
        let mut st = warm.clone();
        let (_, cache) = batchnorm_forward(&x, &gamma, &beta, &mut st, mode).unwrap();
        let grads = batchnorm_backward(&r, &gamma, &cache).unwrap();
        let h = 1e-5;
        let mut num = Tensor::zeros(shape);
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp.data_mut()[i] += h;
            let mut xm = x.clone();
            xm.data_mut()[i] -= h;
            num.data_mut()[i] = (loss(&xp, &gamma, &beta) - loss(&xm, &gamma, &beta)) / (2.0 * h);
        }
        assert!(rel_err(&grads.input, &num) < 1e-4);
        for ch in 0..c {
            let mut gp = gamma.clone();
            gp[ch] += h;
            let mut gm = gamma.clone();
            gm[ch] -= h;
            let ng = (loss(&x, &gp, &beta) - loss(&x, &gm, &beta)) / (2.0 * h);
            assert!((ng - grads.gamma[ch]).abs() < 1e-6 * (1.0 + ng.abs()));
            let mut bp = beta.clone();
            bp[ch] += h;
            let mut bm = beta.clone();
            bm[ch] -= h;
            let nb = (loss(&x, &gamma, &bp) - loss(&x, &gamma, &bm)) / (2.0 * h);
            assert!((nb - grads.beta[ch]).abs() < 1e-6 * (1.0 + nb.abs()));
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        fd_check(BnMode::Train, &[3, 2, 3, 3], 11);
        fd_check(BnMode::Train, &[5, 4], 12);
        fd_check(BnMode::Eval, &[2, 3, 2, 2], 13);
    }
}
