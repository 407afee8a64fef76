use super::module::join;
use super::{Mode, Module, Param, Tensor};
use crate::{Error, Result};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Per-channel batch normalization over batch × spatial positions.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm2d {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Tensor,
    pub running_var: Tensor,
}

#[derive(Debug, Clone)]
pub struct BatchNormCache {
    pub mode: Mode,
    /// Normalized input `x̂`.
    pub normalized: Tensor,
    pub inv_std: Vec<f64>,
    /// Batch mean and biased variance (train mode only).
    pub batch_mean: Vec<f64>,
    pub batch_var: Vec<f64>,
    /// Elements per channel.
    pub count: usize,
}

impl BatchNorm2d {
    pub fn new(channels: usize) -> Self {
        BatchNorm2d {
            gamma: Param::new(Tensor::filled(&[channels], 1.0)),
            beta: Param::new(Tensor::zeros(&[channels])),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::filled(&[channels], 1.0),
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn param_count(channels: usize) -> u64 {
        2 * channels as u64
    }
}

pub fn batchnorm_forward(bn: &BatchNorm2d, x: &Tensor, mode: Mode) -> Result<(Tensor, BatchNormCache)> {
    let [n, c, h, w] = x.dims4()?;
    if c != bn.channels() {
        return Err(Error::Shape(format!("batch-norm over {} channels applied to {c}", bn.channels())));
    }
    let plane = h * w;
    let count = n * plane;
    let xs = x.data();
    let channel_values = |ch: usize| (0..n).flat_map(move |i| xs[(i * c + ch) * plane..][..plane].iter());

    let (mean, var): (Vec<f64>, Vec<f64>) = match mode {
        Mode::Train => (0..c)
            .map(|ch| {
                let m = channel_values(ch).sum::<f64>() / count as f64;
                let v = channel_values(ch).map(|v| (v - m) * (v - m)).sum::<f64>() / count as f64;
                (m, v)
            })
            .unzip(),
        Mode::Eval => (bn.running_mean.data().to_vec(), bn.running_var.data().to_vec()),
    };
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();

    let mut normalized = vec![0.0; xs.len()];
    let mut out = vec![0.0; xs.len()];
    for (idx, (xv, (nv, ov))) in xs.iter().zip(normalized.iter_mut().zip(out.iter_mut())).enumerate() {
        let ch = (idx / plane) % c;
        *nv = (xv - mean[ch]) * inv_std[ch];
        *ov = bn.gamma.value.data()[ch] * *nv + bn.beta.value.data()[ch];
    }
    let (batch_mean, batch_var) = match mode {
        Mode::Train => (mean, var),
        Mode::Eval => (Vec::new(), Vec::new()),
    };
    Ok((
        Tensor::new(x.dims(), out)?,
        BatchNormCache { mode, normalized: Tensor::new(x.dims(), normalized)?, inv_std, batch_mean, batch_var, count },
    ))
}

/// Returns `(dx, dgamma, dbeta)`.
pub fn batchnorm_backward(bn: &BatchNorm2d, cache: &BatchNormCache, dy: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
    cache.normalized.same_dims(dy, "batchnorm_backward")?;
    let [_, c, h, w] = dy.dims4()?;
    let plane = h * w;
    let dys = dy.data();
    let xhat = cache.normalized.data();
    let mut dgamma = vec![0.0; c];
    let mut dbeta = vec![0.0; c];
    for (idx, (g, xh)) in dys.iter().zip(xhat).enumerate() {
        let ch = (idx / plane) % c;
        dbeta[ch] += g;
        dgamma[ch] += g * xh;
    }
    let gamma = bn.gamma.value.data();
    let m = cache.count as f64;
    let dx: Vec<f64> = dys
        .iter()
        .zip(xhat)
        .enumerate()
        .map(|(idx, (g, xh))| {
            let ch = (idx / plane) % c;
            let scale = gamma[ch] * cache.inv_std[ch];
            match cache.mode {
                Mode::Train => scale * (g - dbeta[ch] / m - xh * dgamma[ch] / m),
                Mode::Eval => scale * g,
            }
        })
        .collect();
    Ok((Tensor::new(dy.dims(), dx)?, Tensor::new(&[c], dgamma)?, Tensor::new(&[c], dbeta)?))
}

impl Module for BatchNorm2d {
    type Cache = BatchNormCache;

    fn forward(&self, x: &Tensor, mode: Mode) -> Result<(Tensor, BatchNormCache)> {
        batchnorm_forward(self, x, mode)
    }

    fn backward(&mut self, cache: &BatchNormCache, dy: &Tensor) -> Result<Tensor> {
        let (dx, dg, db) = batchnorm_backward(self, cache, dy)?;
        self.gamma.grad.add_assign(&dg)?;
        self.beta.grad.add_assign(&db)?;
        Ok(dx)
    }

    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        f(&join(prefix, "gamma"), &self.gamma);
        f(&join(prefix, "beta"), &self.beta);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join(prefix, "gamma"), &mut self.gamma);
        f(&join(prefix, "beta"), &mut self.beta);
    }

    fn visit_buffers(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        f(&join(prefix, "running_mean"), &self.running_mean);
        f(&join(prefix, "running_var"), &self.running_var);
    }

    fn visit_buffers_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f(&join(prefix, "running_mean"), &mut self.running_mean);
        f(&join(prefix, "running_var"), &mut self.running_var);
    }

    /// Exponential moving average with momentum 0.1; the running variance
    /// uses the unbiased batch variance.
    fn commit_stats(&mut self, cache: &BatchNormCache) {
        if cache.mode != Mode::Train {
            return;
        }
        let m = cache.count as f64;
        let unbias = if m > 1.0 { m / (m - 1.0) } else { 1.0 };
        for (r, b) in self.running_mean.data_mut().iter_mut().zip(&cache.batch_mean) {
            *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * b;
        }
        for (r, b) in self.running_var.data_mut().iter_mut().zip(&cache.batch_var) {
            *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * b * unbias;
        }
    }
}
