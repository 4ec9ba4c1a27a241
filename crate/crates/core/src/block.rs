//! The InternImage basic block: DCNv3 with a separable offset/mask predictor,
//! post-norm residuals and a GELU feed-forward network.

use alloc::vec;
use alloc::vec::Vec;

use crate::dcn::{dcnv3_backward, dcnv3_forward, DcnConfig, DcnWeights, Projection, SamplingField};
use crate::ops::{
    conv2d, conv2d_backward, gelu, gelu_backward, layer_norm_backward, layer_norm_forward, linear_project,
    linear_project_backward, Conv2dWeights, LayerNormCache, LayerNormParams, LinearWeights,
};
use crate::params::{init_linear, join, Parameters, SeededRng};
use crate::{Error, Result, Shape4, Tensor4};

/// Initial value of the per-channel layer-scale factors when enabled.
pub const LAYER_SCALE_INIT: f64 = 1e-5;

/// Separable predictor: 3×3 depthwise convolution then a per-site linear map to
/// `3·K·G` channels (offsets first, then mask logits).
#[derive(Debug, Clone, PartialEq)]
pub struct Predictor {
    pub depthwise: Conv2dWeights,
    pub linear: LinearWeights,
}

impl Predictor {
    /// Zero-initialized predictor: zero offsets and uniform masks on the first pass.
    pub fn zeros(cfg: &DcnConfig) -> Result<Self> {
        let c = cfg.channels;
        Ok(Self {
            depthwise: Conv2dWeights::zeros(c, c, 3, 1, 1, c, true)?,
            linear: LinearWeights::zeros(c, cfg.offset_channels() + cfg.mask_channels(), true),
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self { depthwise: self.depthwise.zeros_like(), linear: self.linear.zeros_like() }
    }
}

impl Parameters for Predictor {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        self.depthwise.visit(&join(prefix, "dw"), f);
        self.linear.visit(&join(prefix, "linear"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        self.depthwise.visit_mut(&join(prefix, "dw"), f);
        self.linear.visit_mut(&join(prefix, "linear"), f);
    }
}

/// Intermediate activations of [`predict_field`].
#[derive(Debug, Clone)]
pub struct PredictorCache {
    depthwise_out: Tensor4,
}

pub fn predict_field(x: &Tensor4, p: &Predictor, cfg: &DcnConfig) -> Result<SamplingField> {
    predict_field_forward(x, p, cfg).map(|(f, _)| f)
}

fn predict_field_forward(x: &Tensor4, p: &Predictor, cfg: &DcnConfig) -> Result<(SamplingField, PredictorCache)> {
    if x.shape().c != cfg.channels {
        return Err(Error::shape("predict_field", cfg.channels, x.shape().c));
    }
    let expected = cfg.offset_channels() + cfg.mask_channels();
    if p.linear.out_dim != expected {
        return Err(Error::shape("predict_field output channels", expected, p.linear.out_dim));
    }
    let depthwise_out = conv2d(x, &p.depthwise)?;
    let raw = linear_project(&depthwise_out, &p.linear)?;
    Ok((split_field(&raw, cfg.offset_channels()), PredictorCache { depthwise_out }))
}

fn split_field(raw: &Tensor4, n_offsets: usize) -> SamplingField {
    let s = raw.shape();
    let plane = s.plane();
    let mut offsets = Tensor4::zeros(Shape4::new(s.n, n_offsets, s.h, s.w));
    let mut mask_logits = Tensor4::zeros(Shape4::new(s.n, s.c - n_offsets, s.h, s.w));
    for n in 0..s.n {
        let item = raw.item(n);
        let (o, m) = item.split_at(n_offsets * plane);
        offsets.data_mut()[n * o.len()..(n + 1) * o.len()].copy_from_slice(o);
        mask_logits.data_mut()[n * m.len()..(n + 1) * m.len()].copy_from_slice(m);
    }
    SamplingField { offsets, mask_logits }
}

fn join_field(field: &SamplingField) -> Tensor4 {
    let so = field.offsets.shape();
    let sm = field.mask_logits.shape();
    let mut data = Vec::with_capacity(field.offsets.len() + field.mask_logits.len());
    for n in 0..so.n {
        data.extend_from_slice(field.offsets.item(n));
        data.extend_from_slice(field.mask_logits.item(n));
    }
    Tensor4::from_vec(Shape4::new(so.n, so.c + sm.c, so.h, so.w), data).expect("field halves share n, h, w")
}

fn predict_field_backward(
    x: &Tensor4,
    p: &Predictor,
    cache: &PredictorCache,
    grad: &SamplingField,
) -> Result<(Tensor4, Predictor)> {
    let g_raw = join_field(grad);
    let (g_dw, g_linear) = linear_project_backward(&cache.depthwise_out, &p.linear, &g_raw)?;
    let conv = conv2d_backward(x, &p.depthwise, &g_dw)?;
    Ok((conv.input, Predictor { depthwise: conv.weights, linear: g_linear }))
}

/// Two-layer GELU feed-forward network `C → r·C → C`.
#[derive(Debug, Clone, PartialEq)]
pub struct Ffn {
    pub fc1: LinearWeights,
    pub fc2: LinearWeights,
}

impl Parameters for Ffn {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        self.fc1.visit(&join(prefix, "fc1"), f);
        self.fc2.visit(&join(prefix, "fc2"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        self.fc1.visit_mut(&join(prefix, "fc1"), f);
        self.fc2.visit_mut(&join(prefix, "fc2"), f);
    }
}

/// Per-channel residual-branch scales.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerScale {
    pub dcn: Vec<f64>,
    pub ffn: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams {
    pub cfg: DcnConfig,
    pub dcn: DcnWeights,
    pub predictor: Predictor,
    pub ln1: LayerNormParams,
    pub ln2: LayerNormParams,
    pub ffn: Ffn,
    pub layer_scale: Option<LayerScale>,
}

impl BlockParams {
    /// All-zero block with the given shape; LN affines are (1, 0).
    pub fn zeros(cfg: DcnConfig, ffn_ratio: usize, layer_scale: bool) -> Result<Self> {
        cfg.validate()?;
        if cfg.stride != 1 || 2 * cfg.pad != cfg.dilation * (cfg.kernel - 1) {
            return Err(Error::Config("basic block needs a same-padded, stride-1 DCN".into()));
        }
        if ffn_ratio == 0 {
            return Err(Error::Config("ffn ratio must be positive".into()));
        }
        let c = cfg.channels;
        Ok(Self {
            cfg,
            dcn: DcnWeights::zeros(&cfg, true),
            predictor: Predictor::zeros(&cfg)?,
            ln1: LayerNormParams::new(c),
            ln2: LayerNormParams::new(c),
            ffn: Ffn {
                fc1: LinearWeights::zeros(c, ffn_ratio * c, true),
                fc2: LinearWeights::zeros(ffn_ratio * c, c, true),
            },
            layer_scale: layer_scale.then(|| LayerScale { dcn: vec![LAYER_SCALE_INIT; c], ffn: vec![LAYER_SCALE_INIT; c] }),
        })
    }

    /// Fan-in uniform projections, zero predictor, unit LN.
    pub fn init(cfg: DcnConfig, ffn_ratio: usize, layer_scale: bool, rng: &mut SeededRng) -> Result<Self> {
        let mut b = Self::zeros(cfg, ffn_ratio, layer_scale)?;
        match &mut b.dcn.projection {
            Projection::Shared(w) => init_linear(w, rng),
            Projection::PerPoint { weights, .. } => weights.iter_mut().for_each(|w| init_linear(w, rng)),
        }
        init_linear(&mut b.ffn.fc1, rng);
        init_linear(&mut b.ffn.fc2, rng);
        Ok(b)
    }

    /// Same structure, every value zero (gradient accumulator).
    pub fn zeros_like(&self) -> Self {
        Self {
            cfg: self.cfg,
            dcn: self.dcn.zeros_like(),
            predictor: self.predictor.zeros_like(),
            ln1: self.ln1.zeros_like(),
            ln2: self.ln2.zeros_like(),
            ffn: Ffn { fc1: self.ffn.fc1.zeros_like(), fc2: self.ffn.fc2.zeros_like() },
            layer_scale: self
                .layer_scale
                .as_ref()
                .map(|s| LayerScale { dcn: vec![0.0; s.dcn.len()], ffn: vec![0.0; s.ffn.len()] }),
        }
    }

    pub fn ffn_ratio(&self) -> usize {
        self.ffn.fc1.out_dim / self.cfg.channels
    }

    /// Seeds the predictor with small random weights so offsets are non-zero.
    pub fn randomize_predictor(&mut self, scale: f64, rng: &mut SeededRng) {
        crate::params::fill_uniform(&mut self.predictor.depthwise.kernel, scale, rng);
        crate::params::fill_uniform(&mut self.predictor.linear.matrix, scale, rng);
        if let Some(b) = &mut self.predictor.linear.bias {
            crate::params::fill_uniform(b, scale, rng);
        }
    }
}

impl Parameters for BlockParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        self.dcn.visit(&join(prefix, "dcn"), f);
        self.predictor.visit(&join(prefix, "predictor"), f);
        self.ln1.visit(&join(prefix, "ln1"), f);
        self.ffn.visit(&join(prefix, "ffn"), f);
        self.ln2.visit(&join(prefix, "ln2"), f);
        if let Some(s) = &self.layer_scale {
            f(&join(prefix, "gamma1"), &[s.dcn.len()], &s.dcn);
            f(&join(prefix, "gamma2"), &[s.ffn.len()], &s.ffn);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        self.dcn.visit_mut(&join(prefix, "dcn"), f);
        self.predictor.visit_mut(&join(prefix, "predictor"), f);
        self.ln1.visit_mut(&join(prefix, "ln1"), f);
        self.ffn.visit_mut(&join(prefix, "ffn"), f);
        self.ln2.visit_mut(&join(prefix, "ln2"), f);
        if let Some(s) = &mut self.layer_scale {
            f(&join(prefix, "gamma1"), &[s.dcn.len()], &mut s.dcn);
            f(&join(prefix, "gamma2"), &[s.ffn.len()], &mut s.ffn);
        }
    }
}

/// Everything [`basic_block_backward`] needs from the forward pass.
#[derive(Debug, Clone)]
pub struct BlockCache {
    input: Tensor4,
    field: SamplingField,
    predictor: PredictorCache,
    dcn_out: Tensor4,
    ln1: LayerNormCache,
    y: Tensor4,
    hidden: Tensor4,
    activated: Tensor4,
    ffn_out: Tensor4,
    ln2: LayerNormCache,
}

impl BlockCache {
    /// The sampling field predicted during the forward pass.
    pub fn field(&self) -> &SamplingField {
        &self.field
    }
}

fn scale_channels(x: &Tensor4, scale: Option<&[f64]>) -> Tensor4 {
    match scale {
        None => x.clone(),
        Some(s) => {
            let sh = x.shape();
            let mut out = x.clone();
            for n in 0..sh.n {
                for (c, &sc) in s.iter().enumerate() {
                    out.plane_mut(n, c).iter_mut().for_each(|v| *v *= sc);
                }
            }
            out
        }
    }
}

/// `Σ_{n,site} grad · value` per channel.
fn channel_dot(grad: &Tensor4, value: &Tensor4) -> Vec<f64> {
    let s = grad.shape();
    (0..s.c)
        .map(|c| {
            (0..s.n)
                .map(|n| grad.plane(n, c).iter().zip(value.plane(n, c)).map(|(a, b)| a * b).sum::<f64>())
                .sum()
        })
        .collect()
}

pub fn basic_block(x: &Tensor4, p: &BlockParams) -> Result<Tensor4> {
    basic_block_forward(x, p).map(|(z, _)| z)
}

/// Post-norm block: `y = LN1(x + s1 ⊙ DCN(x, field(x)))`, `z = LN2(y + s2 ⊙ FFN(y))`.
pub fn basic_block_forward(x: &Tensor4, p: &BlockParams) -> Result<(Tensor4, BlockCache)> {
    let (field, predictor) = predict_field_forward(x, &p.predictor, &p.cfg)?;
    let dcn_out = dcnv3_forward(x, &field, &p.dcn, &p.cfg)?;
    let residual1 = x.add(&scale_channels(&dcn_out, p.layer_scale.as_ref().map(|s| s.dcn.as_slice())))?;
    let (y, ln1) = layer_norm_forward(&residual1, &p.ln1)?;
    let hidden = linear_project(&y, &p.ffn.fc1)?;
    let activated = gelu(&hidden);
    let ffn_out = linear_project(&activated, &p.ffn.fc2)?;
    let residual2 = y.add(&scale_channels(&ffn_out, p.layer_scale.as_ref().map(|s| s.ffn.as_slice())))?;
    let (z, ln2) = layer_norm_forward(&residual2, &p.ln2)?;
    let cache = BlockCache { input: x.clone(), field, predictor, dcn_out, ln1, y, hidden, activated, ffn_out, ln2 };
    Ok((z, cache))
}

/// Pullback of [`basic_block`]: input gradient and a parameter-shaped gradient.
pub fn basic_block_backward(p: &BlockParams, cache: &BlockCache, grad_out: &Tensor4) -> Result<(Tensor4, BlockParams)> {
    let mut grads = p.zeros_like();
    let (g_res2, g_ln2) = layer_norm_backward(&cache.ln2, &p.ln2, grad_out)?;
    grads.ln2 = g_ln2;
    let s_ffn = p.layer_scale.as_ref().map(|s| s.ffn.as_slice());
    let g_ffn_out = scale_channels(&g_res2, s_ffn);
    let (g_act, g_fc2) = linear_project_backward(&cache.activated, &p.ffn.fc2, &g_ffn_out)?;
    let g_hidden = gelu_backward(&cache.hidden, &g_act)?;
    let (g_y_ffn, g_fc1) = linear_project_backward(&cache.y, &p.ffn.fc1, &g_hidden)?;
    grads.ffn = Ffn { fc1: g_fc1, fc2: g_fc2 };
    let mut g_y = g_res2.clone();
    g_y.add_assign(&g_y_ffn)?;

    let (g_res1, g_ln1) = layer_norm_backward(&cache.ln1, &p.ln1, &g_y)?;
    grads.ln1 = g_ln1;
    let s_dcn = p.layer_scale.as_ref().map(|s| s.dcn.as_slice());
    let g_dcn_out = scale_channels(&g_res1, s_dcn);
    if let Some(ls) = &mut grads.layer_scale {
        ls.dcn = channel_dot(&g_res1, &cache.dcn_out);
        ls.ffn = channel_dot(&g_res2, &cache.ffn_out);
    }
    let dcn = dcnv3_backward(&g_dcn_out, &cache.input, &cache.field, &p.dcn, &p.cfg)?;
    grads.dcn = dcn.weights;
    let g_field = SamplingField { offsets: dcn.offsets, mask_logits: dcn.mask_logits };
    let (g_x_pred, g_pred) = predict_field_backward(&cache.input, &p.predictor, &cache.predictor, &g_field)?;
    grads.predictor = g_pred;

    let mut g_x = g_res1;
    g_x.add_assign(&dcn.input)?;
    g_x.add_assign(&g_x_pred)?;
    Ok((g_x, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::layer_norm;
    use crate::params::seeded_rng;

    fn input(shape: (usize, usize, usize, usize), seed: u64) -> Tensor4 {
        let mut rng = seeded_rng(seed);
        let mut t = Tensor4::zeros(shape);
        crate::params::fill_uniform(t.data_mut(), 1.0, &mut rng);
        t
    }

    #[test]
    fn zero_predictor_gives_regular_grid() {
        let cfg = DcnConfig::new(8, 2);
        let p = Predictor::zeros(&cfg).unwrap();
        let f = predict_field(&input((1, 8, 5, 5), 1), &p, &cfg).unwrap();
        assert_eq!(f.offsets.shape(), Shape4::new(1, 2 * 9 * 2, 5, 5));
        assert_eq!(f.mask_logits.shape(), Shape4::new(1, 9 * 2, 5, 5));
        assert!(f.offsets.data().iter().chain(f.mask_logits.data()).all(|&v| v == 0.0));
    }

    #[test]
    fn predictor_emits_3kg_channels() {
        for g in [1, 2, 4] {
            let cfg = DcnConfig::new(8, g);
            let p = Predictor::zeros(&cfg).unwrap();
            assert_eq!(p.linear.out_dim, 3 * 9 * g);
        }
    }

    #[test]
    fn constant_input_gives_constant_interior_field() {
        let cfg = DcnConfig::new(4, 2);
        let mut rng = seeded_rng(3);
        let mut b = BlockParams::zeros(cfg, 4, false).unwrap();
        b.randomize_predictor(0.5, &mut rng);
        let f = predict_field(&Tensor4::full((1, 4, 6, 6), 0.7), &b.predictor, &cfg).unwrap();
        for t in [&f.offsets, &f.mask_logits] {
            for c in 0..t.shape().c {
                let v = t.at(0, c, 1, 1);
                for h in 1..5 {
                    for w in 1..5 {
                        assert!((t.at(0, c, h, w) - v).abs() < 1e-15);
                    }
                }
            }
        }
    }

    #[test]
    fn dead_branches_reduce_to_stacked_norms() {
        let cfg = DcnConfig::new(8, 2);
        let mut b = BlockParams::zeros(cfg, 4, false).unwrap();
        let mut rng = seeded_rng(9);
        init_linear(&mut b.ffn.fc1, &mut rng);
        crate::params::fill_uniform(&mut b.ln1.gamma, 1.0, &mut rng);
        crate::params::fill_uniform(&mut b.ln1.beta, 1.0, &mut rng);
        let x = input((2, 8, 4, 4), 2);
        let z = basic_block(&x, &b).unwrap();
        let expected = layer_norm(&layer_norm(&x, &b.ln1).unwrap(), &b.ln2).unwrap();
        assert!(z.max_abs_diff(&expected).unwrap() < 1e-12);
    }

    #[test]
    fn shape_is_preserved() {
        let mut rng = seeded_rng(4);
        for i in 0..20u64 {
            let g = [1, 2, 4][i as usize % 3];
            let c = g * (1 + i as usize % 3);
            let side = 3 + i as usize % 4;
            let mut b = BlockParams::init(DcnConfig::new(c, g), 1 + i as usize % 4, i % 2 == 0, &mut rng).unwrap();
            b.randomize_predictor(0.3, &mut rng);
            let x = input((1 + i as usize % 2, c, side, side + 1), i);
            assert_eq!(basic_block(&x, &b).unwrap().shape(), x.shape());
        }
    }
}
