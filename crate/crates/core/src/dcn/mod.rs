//! The DCNv3 operator and its DCNv2 ancestor.
//!
//! For every output site `p0` and aggregation group `g` the operator samples
//! the group's channel slice at the `K` grid points `p0 + p_k` displaced by
//! learned offsets, weights the samples by normalized modulation scalars, and
//! projects the result:
//!
//! ```text
//! y(p0) = Σ_g Σ_k w_g · m_gk · x_g(p0 + p_k + Δp_gk)
//! ```
//!
//! `w_g` does not depend on `k`, so the group samples are aggregated first and
//! the `C × C` block projection is applied once per site. The naive oracle in
//! [`dcnv3_naive_forward`] keeps the same grouping, so both paths add the same
//! terms in the same order.
//!
//! Field channel layout is group-major, then sampling point, then `(dy, dx)`:
//! offset channel `2·(g·K + k) + {0: dy, 1: dx}`, mask channel `g·K + k`.
//! Sampling points are enumerated row-major over the `k × k` grid. Offsets are
//! in input pixels.

mod backward;
pub mod bilinear;
mod forward;
mod naive;

use alloc::vec::Vec;

pub use backward::{dcnv3_backward, DcnGrads};
pub use bilinear::{bilinear_sample, BilinearTaps};
pub use forward::{dcnv2_forward, dcnv3_forward, modulation_scalars};
pub use naive::{dcnv3_naive_forward, naive_modulation};

use crate::ops::LinearWeights;
use crate::params::{join, Parameters};
use crate::{Error, Result, Shape4, Tensor4};

/// How the `K` modulation logits of a group are turned into scalars.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Normalization {
    /// Softmax along the sampling points; scalars sum to 1.
    Softmax,
    /// Element-wise sigmoid; the sum ranges over `[0, K]`.
    Sigmoid,
}

/// The four rows of the three-modification ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Ablation {
    /// Per-point projection weights, multi-group, softmax.
    UnsharedWeights,
    /// Shared weights, a single group, softmax.
    SingleGroup,
    /// Shared weights, multi-group, sigmoid.
    SigmoidModulation,
    /// Full DCNv3.
    Dcnv3,
}

impl Ablation {
    pub const ALL: [Ablation; 4] =
        [Ablation::UnsharedWeights, Ablation::SingleGroup, Ablation::SigmoidModulation, Ablation::Dcnv3];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::UnsharedWeights => "unshared",
            Ablation::SingleGroup => "single-group",
            Ablation::SigmoidModulation => "sigmoid",
            Ablation::Dcnv3 => "dcnv3",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.name() == s)
    }
}

/// Per-layer operator hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DcnConfig {
    pub channels: usize,
    pub groups: usize,
    /// Side of the sampling grid; `K = kernel²`.
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub dilation: usize,
    pub shared_weights: bool,
    /// When false the operator behaves as if `groups == 1`.
    pub multi_group: bool,
    pub normalization: Normalization,
}

impl DcnConfig {
    /// DCNv3 defaults: 3×3 grid, stride 1, same padding, all three modifications on.
    pub fn new(channels: usize, groups: usize) -> Self {
        Self {
            channels,
            groups,
            kernel: 3,
            stride: 1,
            pad: 1,
            dilation: 1,
            shared_weights: true,
            multi_group: true,
            normalization: Normalization::Softmax,
        }
    }

    /// Same-padded configuration for an odd grid side.
    pub fn with_kernel(mut self, kernel: usize) -> Self {
        self.kernel = kernel;
        self.pad = self.dilation * (kernel.saturating_sub(1) / 2);
        self
    }

    pub fn with_ablation(mut self, row: Ablation) -> Self {
        self.shared_weights = true;
        self.multi_group = true;
        self.normalization = Normalization::Softmax;
        match row {
            Ablation::UnsharedWeights => self.shared_weights = false,
            Ablation::SingleGroup => self.multi_group = false,
            Ablation::SigmoidModulation => self.normalization = Normalization::Sigmoid,
            Ablation::Dcnv3 => {}
        }
        self
    }

    /// DCNv2: per-point weights, sigmoid modulation, one group.
    pub fn dcnv2(channels: usize) -> Self {
        Self {
            shared_weights: false,
            multi_group: false,
            normalization: Normalization::Sigmoid,
            ..Self::new(channels, 1)
        }
    }

    pub fn effective_groups(&self) -> usize {
        if self.multi_group {
            self.groups
        } else {
            1
        }
    }

    pub fn group_dim(&self) -> usize {
        self.channels / self.effective_groups()
    }

    /// Number of sampling points `K`.
    pub fn points(&self) -> usize {
        self.kernel * self.kernel
    }

    pub fn offset_channels(&self) -> usize {
        2 * self.points() * self.effective_groups()
    }

    pub fn mask_channels(&self) -> usize {
        self.points() * self.effective_groups()
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.groups == 0 {
            return Err(Error::Config("dcn: channels and groups must be positive".into()));
        }
        if self.channels % self.groups != 0 {
            return Err(Error::Config(alloc::format!(
                "dcn: channels {} not divisible by groups {}",
                self.channels,
                self.groups
            )));
        }
        if self.kernel == 0 || self.kernel % 2 == 0 {
            return Err(Error::Config(alloc::format!("dcn: kernel side {} must be odd", self.kernel)));
        }
        if self.stride == 0 || self.dilation == 0 {
            return Err(Error::Config("dcn: stride and dilation must be positive".into()));
        }
        Ok(())
    }

    pub fn out_dims(&self, h: usize, w: usize) -> (usize, usize) {
        let span = self.dilation * (self.kernel - 1) + 1;
        let f = |len: usize| {
            let padded = len + 2 * self.pad;
            if padded < span {
                0
            } else {
                (padded - span) / self.stride + 1
            }
        };
        (f(h), f(w))
    }

    /// Top-left input coordinate of the sampling grid for output index `o`.
    #[inline]
    pub(crate) fn grid_origin(&self, o: usize) -> f64 {
        (o * self.stride) as f64 - self.pad as f64
    }
}

/// Projection weights, either shared across sampling points or one set per point.
#[derive(Debug, Clone, PartialEq)]
pub enum Projection {
    /// One `C × C` map whose column blocks are the per-group `w_g`.
    Shared(LinearWeights),
    /// `K` bias-free `C × C` maps, one per sampling point, plus one output bias.
    PerPoint { weights: Vec<LinearWeights>, bias: Option<Vec<f64>> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DcnWeights {
    pub projection: Projection,
}

impl DcnWeights {
    /// Zero weights shaped for `cfg`.
    pub fn zeros(cfg: &DcnConfig, with_bias: bool) -> Self {
        let c = cfg.channels;
        let projection = if cfg.shared_weights {
            Projection::Shared(LinearWeights::zeros(c, c, with_bias))
        } else {
            Projection::PerPoint {
                weights: (0..cfg.points()).map(|_| LinearWeights::zeros(c, c, false)).collect(),
                bias: with_bias.then(|| alloc::vec![0.0; c]),
            }
        };
        Self { projection }
    }

    /// Identity projection (for every point when unshared).
    pub fn identity(cfg: &DcnConfig) -> Self {
        let c = cfg.channels;
        let projection = if cfg.shared_weights {
            Projection::Shared(LinearWeights::identity(c, false))
        } else {
            Projection::PerPoint {
                weights: (0..cfg.points()).map(|_| LinearWeights::identity(c, false)).collect(),
                bias: None,
            }
        };
        Self { projection }
    }

    pub fn zeros_like(&self) -> Self {
        let projection = match &self.projection {
            Projection::Shared(w) => Projection::Shared(w.zeros_like()),
            Projection::PerPoint { weights, bias } => Projection::PerPoint {
                weights: weights.iter().map(LinearWeights::zeros_like).collect(),
                bias: bias.as_ref().map(|b| alloc::vec![0.0; b.len()]),
            },
        };
        Self { projection }
    }

    pub(crate) fn check(&self, cfg: &DcnConfig) -> Result<()> {
        let c = cfg.channels;
        let ok = |w: &LinearWeights| w.in_dim == c && w.out_dim == c && w.matrix.len() == c * c;
        match (&self.projection, cfg.shared_weights) {
            (Projection::Shared(w), true) if ok(w) => Ok(()),
            (Projection::PerPoint { weights, bias }, false)
                if weights.len() == cfg.points()
                    && weights.iter().all(|w| ok(w) && w.bias.is_none())
                    && bias.as_ref().is_none_or(|b| b.len() == c) =>
            {
                Ok(())
            }
            _ => Err(Error::Config(alloc::format!(
                "dcn: projection weights do not match config (channels {c}, K {}, shared {})",
                cfg.points(),
                cfg.shared_weights
            ))),
        }
    }
}

impl Parameters for DcnWeights {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        match &self.projection {
            Projection::Shared(w) => w.visit(&join(prefix, "proj"), f),
            Projection::PerPoint { weights, bias } => {
                for (k, w) in weights.iter().enumerate() {
                    w.visit(&join(prefix, &alloc::format!("proj{k}")), f);
                }
                if let Some(b) = bias {
                    f(&join(prefix, "proj_bias"), &[b.len()], b);
                }
            }
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        match &mut self.projection {
            Projection::Shared(w) => w.visit_mut(&join(prefix, "proj"), f),
            Projection::PerPoint { weights, bias } => {
                for (k, w) in weights.iter_mut().enumerate() {
                    w.visit_mut(&join(prefix, &alloc::format!("proj{k}")), f);
                }
                if let Some(b) = bias {
                    f(&join(prefix, "proj_bias"), &[b.len()], b);
                }
            }
        }
    }
}

/// Per-output-site sampling offsets and pre-normalization modulation logits.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingField {
    /// `(n, 2·K·G, H_out, W_out)`.
    pub offsets: Tensor4,
    /// `(n, K·G, H_out, W_out)`.
    pub mask_logits: Tensor4,
}

impl SamplingField {
    /// Zero offsets and zero logits, i.e. the regular grid with uniform softmax weights.
    pub fn zeros(cfg: &DcnConfig, n: usize, h_out: usize, w_out: usize) -> Self {
        Self {
            offsets: Tensor4::zeros((n, cfg.offset_channels(), h_out, w_out)),
            mask_logits: Tensor4::zeros((n, cfg.mask_channels(), h_out, w_out)),
        }
    }

    #[inline]
    pub fn offset_channel(cfg: &DcnConfig, g: usize, k: usize) -> usize {
        2 * (g * cfg.points() + k)
    }

    #[inline]
    pub fn mask_channel(cfg: &DcnConfig, g: usize, k: usize) -> usize {
        g * cfg.points() + k
    }
}

/// Checks `x`, `field` and `w` against `cfg` and returns the output shape.
pub(crate) fn check_inputs(x: &Tensor4, field: &SamplingField, w: &DcnWeights, cfg: &DcnConfig) -> Result<Shape4> {
    cfg.validate()?;
    w.check(cfg)?;
    let s = x.shape();
    if s.c != cfg.channels {
        return Err(Error::shape("dcnv3 input channels", cfg.channels, s.c));
    }
    let (ho, wo) = cfg.out_dims(s.h, s.w);
    let off = Shape4::new(s.n, cfg.offset_channels(), ho, wo);
    let mask = Shape4::new(s.n, cfg.mask_channels(), ho, wo);
    if field.offsets.shape() != off {
        return Err(Error::shape("dcnv3 offsets", off, field.offsets.shape()));
    }
    if field.mask_logits.shape() != mask {
        return Err(Error::shape("dcnv3 mask logits", mask, field.mask_logits.shape()));
    }
    if !field.offsets.is_finite() {
        return Err(Error::Input("dcnv3: non-finite sampling offsets".into()));
    }
    if !field.mask_logits.is_finite() {
        return Err(Error::Input("dcnv3: non-finite mask logits".into()));
    }
    Ok(Shape4::new(s.n, cfg.channels, ho, wo))
}
