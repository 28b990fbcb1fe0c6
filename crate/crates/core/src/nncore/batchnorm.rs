//! Per-channel batch normalization over (n, h, w).

use super::tensor::{lane_dot, lane_sq_dev, lane_sum, Tensor4};
use crate::error::{Error, Result};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Saved forward state needed by the train-mode backward pass.
#[derive(Debug, Clone)]
pub struct BnCache {
    pub xhat: Tensor4,
    pub inv_std: Vec<f64>,
    pub batch_mean: Vec<f64>,
    /// Unbiased batch variance, the value folded into the running estimate.
    pub batch_var_unbiased: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct BnGrads {
    pub dx: Tensor4,
    pub dscale: Vec<f64>,
    pub dshift: Vec<f64>,
}

fn check_channels(x: &Tensor4, scale: &[f64], shift: &[f64]) -> Result<()> {
    if scale.len() != x.c() || shift.len() != x.c() {
        return Err(Error::Shape(format!(
            "batchnorm has {} scale / {} shift values for {} channels",
            scale.len(),
            shift.len(),
            x.c()
        )));
    }
    Ok(())
}

pub fn batchnorm_train(x: &Tensor4, scale: &[f64], shift: &[f64]) -> Result<(Tensor4, BnCache)> {
    check_channels(x, scale, shift)?;
    let [n, c, h, w] = x.shape();
    if n < 2 {
        return Err(Error::BatchSize(format!(
            "batchnorm in train mode needs at least 2 samples, got {n}"
        )));
    }
    let hw = h * w;
    let m = (n * hw) as f64;
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    for i in 0..n {
        let s = x.sample(i);
        for ch in 0..c {
            mean[ch] += lane_sum(&s[ch * hw..(ch + 1) * hw]);
        }
    }
    for v in &mut mean {
        *v /= m;
    }
    for i in 0..n {
        let s = x.sample(i);
        for ch in 0..c {
            let mu = mean[ch];
            var[ch] += lane_sq_dev(&s[ch * hw..(ch + 1) * hw], mu);
        }
    }
    let unbiased: Vec<f64> = var.iter().map(|v| v / (m - 1.0)).collect();
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v / m + BN_EPS).sqrt()).collect();

    let mut xhat = Tensor4::zeros(x.shape());
    let mut y = Tensor4::zeros(x.shape());
    for i in 0..n {
        let s = x.sample(i);
        let xh = xhat.sample_mut(i);
        for ch in 0..c {
            let (mu, k) = (mean[ch], inv_std[ch]);
            for j in ch * hw..(ch + 1) * hw {
                xh[j] = (s[j] - mu) * k;
            }
        }
        let xh = xhat.sample(i);
        let ys = y.sample_mut(i);
        for ch in 0..c {
            let (a, b) = (scale[ch], shift[ch]);
            for j in ch * hw..(ch + 1) * hw {
                ys[j] = a * xh[j] + b;
            }
        }
    }
    Ok((
        y,
        BnCache {
            xhat,
            inv_std,
            batch_mean: mean,
            batch_var_unbiased: unbiased,
        },
    ))
}

pub fn batchnorm_eval(
    x: &Tensor4,
    scale: &[f64],
    shift: &[f64],
    running_mean: &[f64],
    running_var: &[f64],
) -> Result<Tensor4> {
    check_channels(x, scale, shift)?;
    let [n, c, h, w] = x.shape();
    let hw = h * w;
    let mut y = x.clone();
    for i in 0..n {
        let s = y.sample_mut(i);
        for ch in 0..c {
            let a = scale[ch] / (running_var[ch] + BN_EPS).sqrt();
            let b = shift[ch] - a * running_mean[ch];
            for v in &mut s[ch * hw..(ch + 1) * hw] {
                *v = a * *v + b;
            }
        }
    }
    Ok(y)
}

pub fn batchnorm_backward(cache: &BnCache, scale: &[f64], dy: &Tensor4) -> BnGrads {
    let [n, c, h, w] = dy.shape();
    let hw = h * w;
    let m = (n * hw) as f64;
    let mut dscale = vec![0.0; c];
    let mut dshift = vec![0.0; c];
    for i in 0..n {
        let g = dy.sample(i);
        let xh = cache.xhat.sample(i);
        for ch in 0..c {
            let r = ch * hw..(ch + 1) * hw;
            dshift[ch] += lane_sum(&g[r.clone()]);
            dscale[ch] += lane_dot(&g[r.clone()], &xh[r]);
        }
    }
    // With dxhat = γ·dy: Σdxhat = γ·dshift and Σ(dxhat·xhat) = γ·dscale.
    let mut dx = Tensor4::zeros(dy.shape());
    for i in 0..n {
        let g = dy.sample(i);
        let xh = cache.xhat.sample(i);
        let d = dx.sample_mut(i);
        for ch in 0..c {
            let k = scale[ch] * cache.inv_std[ch] / m;
            let (ds, dc) = (dshift[ch], dscale[ch]);
            for j in ch * hw..(ch + 1) * hw {
                d[j] = k * (m * g[j] - ds - xh[j] * dc);
            }
        }
    }
    BnGrads { dx, dscale, dshift }
}

/// `running ← momentum·running + (1 − momentum)·batch`.
pub fn update_running(running_mean: &mut [f64], running_var: &mut [f64], cache: &BnCache) {
    for (r, b) in running_mean.iter_mut().zip(&cache.batch_mean) {
        *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * b;
    }
    for (r, b) in running_var.iter_mut().zip(&cache.batch_var_unbiased) {
        *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * b;
    }
}
