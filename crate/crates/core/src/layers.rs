//! Convolutional stem, stage-transition downsampling and the classification head.

use crate::ops::{
    conv2d, conv2d_backward, gelu, gelu_backward, global_avg_pool, global_avg_pool_backward, layer_norm_backward,
    layer_norm_forward, linear_project, linear_project_backward, Conv2dWeights, LayerNormCache, LayerNormParams,
    LinearWeights,
};
use crate::params::{init_conv, init_linear, join, Parameters, SeededRng};
use crate::{Error, Result, Shape4, Tensor4};

/// `conv(3→C/2, k3 s2 p1) → LN → GELU → conv(C/2→C, k3 s2 p1) → LN`; 4× spatial reduction.
#[derive(Debug, Clone, PartialEq)]
pub struct Stem {
    pub conv1: Conv2dWeights,
    pub ln1: LayerNormParams,
    pub conv2: Conv2dWeights,
    pub ln2: LayerNormParams,
}

impl Stem {
    pub fn zeros(in_channels: usize, out_channels: usize) -> Result<Self> {
        if out_channels == 0 || out_channels % 2 != 0 {
            return Err(Error::Config(alloc::format!("stem: output channels {out_channels} must be even")));
        }
        let mid = out_channels / 2;
        Ok(Self {
            conv1: Conv2dWeights::zeros(in_channels, mid, 3, 2, 1, 1, true)?,
            ln1: LayerNormParams::new(mid),
            conv2: Conv2dWeights::zeros(mid, out_channels, 3, 2, 1, 1, true)?,
            ln2: LayerNormParams::new(out_channels),
        })
    }

    pub fn init(in_channels: usize, out_channels: usize, rng: &mut SeededRng) -> Result<Self> {
        let mut s = Self::zeros(in_channels, out_channels)?;
        init_conv(&mut s.conv1, rng);
        init_conv(&mut s.conv2, rng);
        Ok(s)
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            conv1: self.conv1.zeros_like(),
            ln1: self.ln1.zeros_like(),
            conv2: self.conv2.zeros_like(),
            ln2: self.ln2.zeros_like(),
        }
    }
}

impl Parameters for Stem {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        self.conv1.visit(&join(prefix, "conv1"), f);
        self.ln1.visit(&join(prefix, "ln1"), f);
        self.conv2.visit(&join(prefix, "conv2"), f);
        self.ln2.visit(&join(prefix, "ln2"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        self.conv1.visit_mut(&join(prefix, "conv1"), f);
        self.ln1.visit_mut(&join(prefix, "ln1"), f);
        self.conv2.visit_mut(&join(prefix, "conv2"), f);
        self.ln2.visit_mut(&join(prefix, "ln2"), f);
    }
}

#[derive(Debug, Clone)]
pub struct StemCache {
    input: Tensor4,
    conv1_out: Tensor4,
    ln1: LayerNormCache,
    ln1_out: Tensor4,
    act: Tensor4,
    ln2: LayerNormCache,
}

pub fn stem(x: &Tensor4, p: &Stem) -> Result<Tensor4> {
    stem_forward(x, p).map(|(y, _)| y)
}

pub fn stem_forward(x: &Tensor4, p: &Stem) -> Result<(Tensor4, StemCache)> {
    let conv1_out = conv2d(x, &p.conv1)?;
    let (ln1_out, ln1) = layer_norm_forward(&conv1_out, &p.ln1)?;
    let act = gelu(&ln1_out);
    let conv2_out = conv2d(&act, &p.conv2)?;
    let (y, ln2) = layer_norm_forward(&conv2_out, &p.ln2)?;
    Ok((y, StemCache { input: x.clone(), conv1_out, ln1, ln1_out, act, ln2 }))
}

pub fn stem_backward(p: &Stem, cache: &StemCache, grad_out: &Tensor4) -> Result<(Tensor4, Stem)> {
    let (g_conv2_out, g_ln2) = layer_norm_backward(&cache.ln2, &p.ln2, grad_out)?;
    let c2 = conv2d_backward(&cache.act, &p.conv2, &g_conv2_out)?;
    let g_ln1_out = gelu_backward(&cache.ln1_out, &c2.input)?;
    let (g_conv1_out, g_ln1) = layer_norm_backward(&cache.ln1, &p.ln1, &g_ln1_out)?;
    let c1 = conv2d_backward(&cache.input, &p.conv1, &g_conv1_out)?;
    debug_assert_eq!(cache.conv1_out.shape(), g_conv1_out.shape());
    Ok((c1.input, Stem { conv1: c1.weights, ln1: g_ln1, conv2: c2.weights, ln2: g_ln2 }))
}

/// `conv(C_i→C_{i+1}, k3 s2 p1) → LN`; halves the spatial size.
#[derive(Debug, Clone, PartialEq)]
pub struct Downsample {
    pub conv: Conv2dWeights,
    pub ln: LayerNormParams,
}

impl Downsample {
    pub fn zeros(in_channels: usize, out_channels: usize) -> Result<Self> {
        Ok(Self {
            conv: Conv2dWeights::zeros(in_channels, out_channels, 3, 2, 1, 1, true)?,
            ln: LayerNormParams::new(out_channels),
        })
    }

    pub fn init(in_channels: usize, out_channels: usize, rng: &mut SeededRng) -> Result<Self> {
        let mut d = Self::zeros(in_channels, out_channels)?;
        init_conv(&mut d.conv, rng);
        Ok(d)
    }

    pub fn zeros_like(&self) -> Self {
        Self { conv: self.conv.zeros_like(), ln: self.ln.zeros_like() }
    }
}

impl Parameters for Downsample {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        self.conv.visit(&join(prefix, "conv"), f);
        self.ln.visit(&join(prefix, "ln"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        self.conv.visit_mut(&join(prefix, "conv"), f);
        self.ln.visit_mut(&join(prefix, "ln"), f);
    }
}

#[derive(Debug, Clone)]
pub struct DownsampleCache {
    input: Tensor4,
    ln: LayerNormCache,
}

pub fn downsample(x: &Tensor4, p: &Downsample) -> Result<Tensor4> {
    downsample_forward(x, p).map(|(y, _)| y)
}

pub fn downsample_forward(x: &Tensor4, p: &Downsample) -> Result<(Tensor4, DownsampleCache)> {
    let conv_out = conv2d(x, &p.conv)?;
    let (y, ln) = layer_norm_forward(&conv_out, &p.ln)?;
    Ok((y, DownsampleCache { input: x.clone(), ln }))
}

pub fn downsample_backward(p: &Downsample, cache: &DownsampleCache, grad_out: &Tensor4) -> Result<(Tensor4, Downsample)> {
    let (g_conv_out, g_ln) = layer_norm_backward(&cache.ln, &p.ln, grad_out)?;
    let c = conv2d_backward(&cache.input, &p.conv, &g_conv_out)?;
    Ok((c.input, Downsample { conv: c.weights, ln: g_ln }))
}

/// Global average pool followed by a linear classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct Head {
    pub fc: LinearWeights,
}

impl Head {
    pub fn zeros(in_channels: usize, num_classes: usize) -> Self {
        Self { fc: LinearWeights::zeros(in_channels, num_classes, true) }
    }

    pub fn init(in_channels: usize, num_classes: usize, rng: &mut SeededRng) -> Self {
        let mut h = Self::zeros(in_channels, num_classes);
        init_linear(&mut h.fc, rng);
        h
    }

    pub fn num_classes(&self) -> usize {
        self.fc.out_dim
    }

    pub fn zeros_like(&self) -> Self {
        Self { fc: self.fc.zeros_like() }
    }
}

impl Parameters for Head {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        self.fc.visit(&join(prefix, "fc"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        self.fc.visit_mut(&join(prefix, "fc"), f);
    }
}

/// Logits of shape `(n, num_classes, 1, 1)`.
pub fn head(x: &Tensor4, p: &Head) -> Result<Tensor4> {
    linear_project(&global_avg_pool(x), &p.fc)
}

pub fn head_backward(x: &Tensor4, p: &Head, grad_logits: &Tensor4) -> Result<(Tensor4, Head)> {
    let pooled = global_avg_pool(x);
    let (g_pooled, g_fc) = linear_project_backward(&pooled, &p.fc, grad_logits)?;
    let s = x.shape();
    let gx = global_avg_pool_backward(Shape4::new(s.n, s.c, s.h, s.w), &g_pooled)?;
    Ok((gx, Head { fc: g_fc }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stem_reduces_four_times() {
        let s = Stem::zeros(3, 64).unwrap();
        let y = stem(&Tensor4::zeros((1, 3, 64, 64)), &s).unwrap();
        assert_eq!(y.shape(), Shape4::new(1, 64, 16, 16));
        let s = Stem::zeros(3, 8).unwrap();
        assert_eq!(stem(&Tensor4::zeros((1, 3, 224, 224)), &s).unwrap().shape(), Shape4::new(1, 8, 56, 56));
    }

    #[test]
    fn zero_stem_outputs_beta() {
        let mut s = Stem::zeros(3, 4).unwrap();
        s.ln2.beta = alloc::vec![0.5, -1.0, 2.0, 0.0];
        let y = stem(&Tensor4::full((1, 3, 8, 8), 3.0), &s).unwrap();
        for c in 0..4 {
            assert!(y.plane(0, c).iter().all(|&v| v == s.ln2.beta[c]));
        }
    }

    #[test]
    fn odd_stem_width_is_rejected() {
        assert!(matches!(Stem::zeros(3, 65), Err(Error::Config(_))));
    }

    #[test]
    fn downsample_shapes() {
        let d = Downsample::zeros(4, 8).unwrap();
        assert_eq!(downsample(&Tensor4::zeros((1, 4, 56, 56)), &d).unwrap().shape(), Shape4::new(1, 8, 28, 28));
        assert_eq!(downsample(&Tensor4::zeros((2, 4, 7, 7)), &d).unwrap().shape(), Shape4::new(2, 8, 4, 4));
    }

    #[test]
    fn head_bias_and_constant_features() {
        let mut h = Head::zeros(3, 2);
        h.fc.bias = Some(alloc::vec![0.5, -0.5]);
        let logits = head(&Tensor4::full((2, 3, 4, 4), 1.0), &h).unwrap();
        assert_eq!(logits.shape(), Shape4::new(2, 2, 1, 1));
        assert_eq!(logits.data(), &[0.5, -0.5, 0.5, -0.5]);

        h.fc.matrix = alloc::vec![1.0, 2.0, 3.0, -1.0, 0.5, 0.25];
        let logits = head(&Tensor4::full((1, 3, 2, 2), 2.0), &h).unwrap();
        // v·row_sum + b with v = 2
        assert_eq!(logits.data(), &[2.0 * 6.0 + 0.5, 2.0 * -0.25 - 0.5]);
    }
}
