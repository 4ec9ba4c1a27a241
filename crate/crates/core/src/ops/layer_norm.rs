use alloc::vec;
use alloc::vec::Vec;

use crate::params::{join, Parameters};
use crate::{Error, Result, Tensor4};

/// Conventional transformer epsilon; LN epsilon is otherwise unspecified.
pub const DEFAULT_LN_EPS: f64 = 1e-6;

/// Affine parameters of a LayerNorm over the channel axis at each site.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNormParams {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub eps: f64,
}

impl LayerNormParams {
    /// gamma = 1, beta = 0.
    pub fn new(channels: usize) -> Self {
        Self { gamma: vec![1.0; channels], beta: vec![0.0; channels], eps: DEFAULT_LN_EPS }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn zeros_like(&self) -> Self {
        Self { gamma: vec![0.0; self.gamma.len()], beta: vec![0.0; self.beta.len()], eps: self.eps }
    }
}

impl Parameters for LayerNormParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        f(&join(prefix, "gamma"), &[self.gamma.len()], &self.gamma);
        f(&join(prefix, "beta"), &[self.beta.len()], &self.beta);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        f(&join(prefix, "gamma"), &[self.gamma.len()], &mut self.gamma);
        f(&join(prefix, "beta"), &[self.beta.len()], &mut self.beta);
    }
}

/// Normalized activations and per-site inverse standard deviations.
#[derive(Debug, Clone)]
pub struct LayerNormCache {
    pub normalized: Tensor4,
    pub inv_std: Vec<f64>,
}

fn check(x: &Tensor4, p: &LayerNormParams) -> Result<()> {
    let c = x.shape().c;
    if p.gamma.len() != c || p.beta.len() != c {
        return Err(Error::shape("layer_norm", c, (p.gamma.len(), p.beta.len())));
    }
    if p.eps.is_nan() || p.eps <= 0.0 {
        return Err(Error::Config("layer_norm: eps must be positive".into()));
    }
    Ok(())
}

pub fn layer_norm(x: &Tensor4, p: &LayerNormParams) -> Result<Tensor4> {
    layer_norm_forward(x, p).map(|(y, _)| y)
}

/// [`layer_norm`] that also returns what the pullback needs.
pub fn layer_norm_forward(x: &Tensor4, p: &LayerNormParams) -> Result<(Tensor4, LayerNormCache)> {
    check(x, p)?;
    let s = x.shape();
    let plane = s.plane();
    let inv_c = 1.0 / s.c as f64;
    let mut normalized = Tensor4::zeros(s);
    let mut out = Tensor4::zeros(s);
    let mut inv_std = vec![0.0; s.n * plane];
    let xd = x.data();
    for n in 0..s.n {
        let base = n * s.c * plane;
        for site in 0..plane {
            let mut mean = 0.0;
            for c in 0..s.c {
                mean += xd[base + c * plane + site];
            }
            mean *= inv_c;
            let mut var = 0.0;
            for c in 0..s.c {
                let d = xd[base + c * plane + site] - mean;
                var += d * d;
            }
            var *= inv_c;
            let r = 1.0 / libm::sqrt(var + p.eps);
            inv_std[n * plane + site] = r;
            for c in 0..s.c {
                let i = base + c * plane + site;
                let xh = (xd[i] - mean) * r;
                normalized[i] = xh;
                out[i] = p.gamma[c] * xh + p.beta[c];
            }
        }
    }
    Ok((out, LayerNormCache { normalized, inv_std }))
}

/// Pullback of [`layer_norm`]: returns the input gradient and the affine-parameter gradients.
pub fn layer_norm_backward(
    cache: &LayerNormCache,
    p: &LayerNormParams,
    grad_out: &Tensor4,
) -> Result<(Tensor4, LayerNormParams)> {
    let s = cache.normalized.shape();
    if grad_out.shape() != s {
        return Err(Error::shape("layer_norm_backward", s, grad_out.shape()));
    }
    let plane = s.plane();
    let inv_c = 1.0 / s.c as f64;
    let mut gx = Tensor4::zeros(s);
    let mut gp = p.zeros_like();
    let xh = cache.normalized.data();
    let go = grad_out.data();
    for n in 0..s.n {
        let base = n * s.c * plane;
        for site in 0..plane {
            let mut mean_g = 0.0;
            let mut mean_gx = 0.0;
            for c in 0..s.c {
                let i = base + c * plane + site;
                let g = go[i] * p.gamma[c];
                mean_g += g;
                mean_gx += g * xh[i];
                gp.gamma[c] += go[i] * xh[i];
                gp.beta[c] += go[i];
            }
            mean_g *= inv_c;
            mean_gx *= inv_c;
            let r = cache.inv_std[n * plane + site];
            for c in 0..s.c {
                let i = base + c * plane + site;
                gx[i] = r * (go[i] * p.gamma[c] - mean_g - xh[i] * mean_gx);
            }
        }
    }
    Ok((gx, gp))
}
