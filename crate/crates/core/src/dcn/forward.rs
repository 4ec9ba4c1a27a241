use alloc::vec;

use super::{check_inputs, BilinearTaps, DcnConfig, DcnWeights, Normalization, Projection, SamplingField};
use crate::ops::{linear_project, sigmoid, softmax};
use crate::{Error, Result, Shape4, Tensor4};

/// Normalized modulation scalars, same layout as `field.mask_logits`.
pub fn modulation_scalars(field: &SamplingField, cfg: &DcnConfig) -> Tensor4 {
    let s = field.mask_logits.shape();
    let k = cfg.points();
    let plane = s.plane();
    let mut out = Tensor4::zeros(s);
    let mut logits = vec![0.0; k];
    let mut probs = vec![0.0; k];
    for n in 0..s.n {
        for g in 0..cfg.effective_groups() {
            for site in 0..plane {
                for (p, l) in logits.iter_mut().enumerate() {
                    *l = field.mask_logits.plane(n, SamplingField::mask_channel(cfg, g, p))[site];
                }
                match cfg.normalization {
                    Normalization::Softmax => softmax(&logits, &mut probs),
                    Normalization::Sigmoid => {
                        probs.iter_mut().zip(&logits).for_each(|(p, &l)| *p = sigmoid(l));
                    }
                }
                for (p, &v) in probs.iter().enumerate() {
                    out.plane_mut(n, SamplingField::mask_channel(cfg, g, p))[site] = v;
                }
            }
        }
    }
    out
}

/// Which sampling points a gather accumulates.
#[derive(Clone, Copy)]
pub(crate) enum Points {
    All,
    One(usize),
}

/// Fills `dst` (`C' × H_out × W_out`) with `Σ_k m_gk · x_g(p)` for group `g` of item `n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gather_group(
    x: &Tensor4,
    field: &SamplingField,
    modulation: &Tensor4,
    cfg: &DcnConfig,
    n: usize,
    g: usize,
    points: Points,
    dst: &mut [f64],
) {
    let s = x.shape();
    let os = modulation.shape();
    let out_plane = os.plane();
    let cg = cfg.group_dim();
    let ks = cfg.kernel;
    let (k_lo, k_hi) = match points {
        Points::All => (0, cfg.points()),
        Points::One(k) => (k, k + 1),
    };
    for ho in 0..os.h {
        for wo in 0..os.w {
            let site = ho * os.w + wo;
            for k in k_lo..k_hi {
                let off = SamplingField::offset_channel(cfg, g, k);
                let y = (cfg.grid_origin(ho) + ((k / ks) * cfg.dilation) as f64) + field.offsets.plane(n, off)[site];
                let xx = (cfg.grid_origin(wo) + ((k % ks) * cfg.dilation) as f64) + field.offsets.plane(n, off + 1)[site];
                let m = modulation.plane(n, SamplingField::mask_channel(cfg, g, k))[site];
                let taps = BilinearTaps::new(s.h, s.w, y, xx);
                for c in 0..cg {
                    let v = taps.sample(x.plane(n, g * cg + c));
                    dst[c * out_plane + site] += m * v;
                }
            }
        }
    }
}

/// Sampled-and-modulated features `(n, C, H_out, W_out)` for `points`.
pub(crate) fn gather(
    x: &Tensor4,
    field: &SamplingField,
    modulation: &Tensor4,
    cfg: &DcnConfig,
    points: Points,
    out_shape: Shape4,
) -> Tensor4 {
    let mut agg = Tensor4::zeros(out_shape);
    let groups = cfg.effective_groups();
    let chunk = cfg.group_dim() * out_shape.plane();
    if chunk == 0 {
        return agg;
    }
    let work = |(i, dst): (usize, &mut [f64])| gather_group(x, field, modulation, cfg, i / groups, i % groups, points, dst);
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        agg.data_mut().par_chunks_mut(chunk).enumerate().for_each(work);
    }
    #[cfg(not(feature = "parallel"))]
    agg.data_mut().chunks_mut(chunk).enumerate().for_each(work);
    agg
}

/// Optimized DCNv3 forward: gather all groups with shared bilinear taps, then
/// project every site at once.
pub fn dcnv3_forward(x: &Tensor4, field: &SamplingField, w: &DcnWeights, cfg: &DcnConfig) -> Result<Tensor4> {
    let out_shape = check_inputs(x, field, w, cfg)?;
    let modulation = modulation_scalars(field, cfg);
    match &w.projection {
        Projection::Shared(proj) => {
            let agg = gather(x, field, &modulation, cfg, Points::All, out_shape);
            linear_project(&agg, proj)
        }
        Projection::PerPoint { weights, bias } => {
            let mut out = Tensor4::zeros(out_shape);
            let c = cfg.channels;
            for (k, wk) in weights.iter().enumerate() {
                let sk = gather(x, field, &modulation, cfg, Points::One(k), out_shape);
                for n in 0..out_shape.n {
                    for o in 0..c {
                        for i in 0..c {
                            let m = wk.get(o, i);
                            let (src, dst) = (sk.plane(n, i), out.plane_mut(n, o));
                            dst.iter_mut().zip(src).for_each(|(d, s)| *d += m * s);
                        }
                    }
                }
            }
            if let Some(b) = bias {
                for n in 0..out_shape.n {
                    for o in 0..c {
                        out.plane_mut(n, o).iter_mut().for_each(|v| *v += b[o]);
                    }
                }
            }
            Ok(out)
        }
    }
}

/// DCNv2: per-point `C × C` weights, sigmoid modulation, a single group.
pub fn dcnv2_forward(x: &Tensor4, field: &SamplingField, w: &DcnWeights, cfg: &DcnConfig) -> Result<Tensor4> {
    if cfg.shared_weights || cfg.effective_groups() != 1 || cfg.normalization != Normalization::Sigmoid {
        return Err(Error::Config(
            "dcnv2 requires per-point weights, sigmoid modulation and a single group".into(),
        ));
    }
    dcnv3_forward(x, field, w, cfg)
}
