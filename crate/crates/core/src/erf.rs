//! Effective receptive fields: gradient footprints of one feature location,
//! and the static receptive field they must stay inside when offsets are zero.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::model::{Depth, Model, ModelConfig, STAGES};
use crate::params::seeded_rng;
use crate::{Error, Result, Shape4, Tensor4};

const CHANNEL_SIGN_SEED: u64 = 0x00e7_f5ee;

/// Closed integer interval `[lo, hi]` of input coordinates (may extend past the border).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Span {
    pub lo: i64,
    pub hi: i64,
}

impl Span {
    pub fn contains(&self, v: i64) -> bool {
        self.lo <= v && v <= self.hi
    }

    pub fn centre(&self) -> f64 {
        (self.lo + self.hi) as f64 / 2.0
    }
}

/// Sliding-window geometry of one spatial layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub dilation: usize,
}

impl Window {
    const STRIDED: Window = Window { kernel: 3, stride: 2, pad: 1, dilation: 1 };

    /// Input span seen by the output span `s`.
    pub fn back(&self, s: Span) -> Span {
        let (st, p) = (self.stride as i64, self.pad as i64);
        Span { lo: s.lo * st - p, hi: s.hi * st - p + ((self.kernel - 1) * self.dilation) as i64 }
    }
}

/// Spatial layers from the input up to `depth`, in forward order.
///
/// Each basic block contributes its DCN sampling grid; the predictor's 3×3
/// depthwise window is no wider, and with a zero predictor it passes no
/// gradient at all.
pub fn layer_windows(cfg: &ModelConfig, depth: Depth) -> Result<Vec<Window>> {
    let mut w = vec![Window::STRIDED, Window::STRIDED];
    let last = match depth {
        Depth::Stem => 0,
        Depth::Stage(i) if (1..=STAGES).contains(&i) => i,
        _ => return Err(Error::Config("receptive fields are defined for the stem and stages 1-4".into())),
    };
    for i in 0..last {
        let dcn = cfg.dcn_config(i);
        for _ in 0..cfg.stack.depths[i] {
            w.push(Window { kernel: dcn.kernel.max(3), stride: 1, pad: dcn.pad.max(1), dilation: dcn.dilation });
        }
        if i + 1 < last {
            w.push(Window::STRIDED);
        }
    }
    Ok(w)
}

/// Static receptive field of feature location `(fy, fx)` at `depth`, unclipped.
pub fn static_receptive_field(cfg: &ModelConfig, depth: Depth, fy: usize, fx: usize) -> Result<(Span, Span)> {
    let windows = layer_windows(cfg, depth)?;
    let mut sy = Span { lo: fy as i64, hi: fy as i64 };
    let mut sx = Span { lo: fx as i64, hi: fx as i64 };
    for w in windows.iter().rev() {
        sy = w.back(sy);
        sx = w.back(sx);
    }
    Ok((sy, sx))
}

/// Feature index along one axis whose receptive-field centre is nearest `pixel`
/// (ties to the lower index).
pub fn nearest_feature(cfg: &ModelConfig, depth: Depth, feature_len: usize, pixel: usize) -> Result<usize> {
    let mut best = 0;
    let mut best_err = f64::INFINITY;
    for i in 0..feature_len {
        let (span, _) = static_receptive_field(cfg, depth, i, 0)?;
        let err = (span.centre() - pixel as f64).abs();
        if err < best_err {
            best = i;
            best_err = err;
        }
    }
    Ok(best)
}

/// Channel-aggregated `|∂feature/∂input|` over the input plane.
#[derive(Debug, Clone, PartialEq)]
pub struct ErfMap {
    pub height: usize,
    pub width: usize,
    /// Row-major, non-negative.
    pub values: Vec<f64>,
    /// Feature location that was activated.
    pub feature: (usize, usize),
}

impl ErfMap {
    pub fn at(&self, y: usize, x: usize) -> f64 {
        self.values[y * self.width + x]
    }

    /// Pixels with a non-zero value.
    pub fn support(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.values.iter().enumerate().filter(|(_, &v)| v != 0.0).map(|(i, _)| (i / self.width, i % self.width))
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }
}

/// Activates every channel of the feature location nearest `(y, x)` at `depth`
/// with a unit-magnitude upstream gradient and backpropagates to the input.
///
/// Channel signs follow a fixed pseudo-random ±1 pattern. An all-ones
/// upstream would be blind: every block ends in a LayerNorm whose outputs at
/// one location sum to a constant, so their channel sum has zero gradient.
pub fn erf_map(model: &Model, input: &Tensor4, depth: Depth, pixel: (usize, usize)) -> Result<ErfMap> {
    let s = input.shape();
    if s.n != 1 {
        return Err(Error::Input(alloc::format!("erf_map expects one image, got batch {}", s.n)));
    }
    if pixel.0 >= s.h || pixel.1 >= s.w {
        return Err(Error::Input(alloc::format!("pixel {pixel:?} outside the {}×{} input", s.h, s.w)));
    }
    if depth == Depth::Logits {
        return Err(Error::Config("erf_map needs a spatial depth (stem or stage)".into()));
    }
    let (feature, tape) = model.forward_tape(input, depth)?;
    let fs = feature.shape();
    let fy = nearest_feature(&model.config, depth, fs.h, pixel.0)?;
    let fx = nearest_feature(&model.config, depth, fs.w, pixel.1)?;
    let mut grad = Tensor4::zeros(fs);
    let mut rng = seeded_rng(CHANNEL_SIGN_SEED);
    for c in 0..fs.c {
        *grad.at_mut(0, c, fy, fx) = if rng.random::<bool>() { 1.0 } else { -1.0 };
    }
    let (gx, _) = model.backward(&tape, &grad)?;
    let mut values = vec![0.0; s.h * s.w];
    for c in 0..s.c {
        for (v, g) in values.iter_mut().zip(gx.plane(0, c)) {
            *v += g.abs();
        }
    }
    Ok(ErfMap { height: s.h, width: s.w, values, feature: (fy, fx) })
}

/// Deterministic smooth synthetic image for untrained ERF probes.
pub fn synthetic_image(h: usize, w: usize, channels: usize) -> Tensor4 {
    Tensor4::from_fn(Shape4::new(1, channels, h, w), |_, c, y, x| {
        libm::sin(0.37 * y as f64 + 1.3 * c as f64) * libm::cos(0.23 * x as f64 - 0.7 * c as f64)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::StackConfig;

    #[test]
    fn stem_field_is_seven_wide() {
        let cfg = ModelConfig::new(StackConfig::new(16, 16, 1, 1));
        let (sy, sx) = static_receptive_field(&cfg, Depth::Stem, 2, 3).unwrap();
        assert_eq!(sy, Span { lo: 5, hi: 11 });
        assert_eq!(sx, Span { lo: 9, hi: 15 });
    }

    #[test]
    fn each_block_widens_by_two_strides() {
        let cfg = ModelConfig::new(StackConfig::new(16, 16, 2, 2));
        let (s, _) = static_receptive_field(&cfg, Depth::Stage(1), 4, 4).unwrap();
        assert_eq!(s.hi - s.lo + 1, 7 + 2 * 8);
        let (s2, _) = static_receptive_field(&cfg, Depth::Stage(2), 2, 2).unwrap();
        // stage 1 field, plus the downsample (2 × 4) and two blocks at stride 8.
        assert_eq!(s2.hi - s2.lo + 1, 23 + 8 + 2 * 16);
        assert_eq!(s2.centre(), 16.0);
    }

    #[test]
    fn nearest_feature_rounds_to_stride() {
        let cfg = ModelConfig::new(StackConfig::new(16, 16, 1, 1));
        assert_eq!(nearest_feature(&cfg, Depth::Stem, 8, 9).unwrap(), 2);
        assert_eq!(nearest_feature(&cfg, Depth::Stage(2), 4, 31).unwrap(), 3);
    }
}
