use alloc::vec;
use alloc::vec::Vec;

use super::forward::{gather, modulation_scalars, Points};
use super::{check_inputs, BilinearTaps, DcnConfig, DcnWeights, Normalization, Projection, SamplingField};
use crate::ops::{linear_project_backward, softmax_backward, LinearWeights};
use crate::{Error, Result, Tensor4};

/// Gradients of a scalar loss with respect to every DCN input.
#[derive(Debug, Clone, PartialEq)]
pub struct DcnGrads {
    pub input: Tensor4,
    pub offsets: Tensor4,
    pub mask_logits: Tensor4,
    pub weights: DcnWeights,
}

/// Exact vector-Jacobian product of [`super::dcnv3_forward`].
///
/// Recomputes the sampled features from the saved forward inputs, then
/// propagates `grad_out` through the projection, the bilinear samples (input
/// and offsets) and the modulation normalization (logits).
pub fn dcnv3_backward(
    grad_out: &Tensor4,
    x: &Tensor4,
    field: &SamplingField,
    w: &DcnWeights,
    cfg: &DcnConfig,
) -> Result<DcnGrads> {
    let out_shape = check_inputs(x, field, w, cfg)?;
    if grad_out.shape() != out_shape {
        return Err(Error::shape("dcnv3_backward", out_shape, grad_out.shape()));
    }
    let modulation = modulation_scalars(field, cfg);
    let k_count = cfg.points();

    // Gradient with respect to the modulated samples of each point.
    let (sample_grads, weight_grads): (Vec<Tensor4>, DcnWeights) = match &w.projection {
        Projection::Shared(proj) => {
            let agg = gather(x, field, &modulation, cfg, Points::All, out_shape);
            let (g_agg, g_proj) = linear_project_backward(&agg, proj, grad_out)?;
            (vec![g_agg], DcnWeights { projection: Projection::Shared(g_proj) })
        }
        Projection::PerPoint { weights, bias } => {
            let mut grads = Vec::with_capacity(k_count);
            let mut g_weights: Vec<LinearWeights> = Vec::with_capacity(k_count);
            for (k, wk) in weights.iter().enumerate() {
                let sk = gather(x, field, &modulation, cfg, Points::One(k), out_shape);
                let (g_sk, g_wk) = linear_project_backward(&sk, wk, grad_out)?;
                grads.push(g_sk);
                g_weights.push(g_wk);
            }
            let g_bias = bias.as_ref().map(|_| {
                (0..cfg.channels)
                    .map(|o| (0..out_shape.n).map(|n| grad_out.plane(n, o).iter().sum::<f64>()).sum())
                    .collect()
            });
            (grads, DcnWeights { projection: Projection::PerPoint { weights: g_weights, bias: g_bias } })
        }
    };
    let sample_grad = |k: usize| if sample_grads.len() == 1 { &sample_grads[0] } else { &sample_grads[k] };

    let s = x.shape();
    let cg = cfg.group_dim();
    let ks = cfg.kernel;
    let mut gx = Tensor4::zeros(s);
    let mut g_off = Tensor4::zeros(field.offsets.shape());
    let mut g_logits = Tensor4::zeros(field.mask_logits.shape());
    let mut m = vec![0.0; k_count];
    let mut g_m = vec![0.0; k_count];
    let mut g_l = vec![0.0; k_count];
    for n in 0..s.n {
        for g in 0..cfg.effective_groups() {
            for ho in 0..out_shape.h {
                for wo in 0..out_shape.w {
                    let site = ho * out_shape.w + wo;
                    for k in 0..k_count {
                        let off = SamplingField::offset_channel(cfg, g, k);
                        let y = (cfg.grid_origin(ho) + ((k / ks) * cfg.dilation) as f64) + field.offsets.plane(n, off)[site];
                        let xx = (cfg.grid_origin(wo) + ((k % ks) * cfg.dilation) as f64)
                            + field.offsets.plane(n, off + 1)[site];
                        let mk = modulation.plane(n, SamplingField::mask_channel(cfg, g, k))[site];
                        m[k] = mk;
                        let taps = BilinearTaps::new(s.h, s.w, y, xx);
                        let gs_t = sample_grad(k);
                        let (mut acc_m, mut acc_y, mut acc_x) = (0.0, 0.0, 0.0);
                        for c in 0..cg {
                            let ch = g * cg + c;
                            let gs = gs_t.plane(n, ch)[site];
                            if gs == 0.0 {
                                continue;
                            }
                            let xc = x.plane(n, ch);
                            acc_m += gs * taps.sample(xc);
                            let gv = mk * gs;
                            let (dvy, dvx) = taps.spatial_grad(xc);
                            acc_y += gv * dvy;
                            acc_x += gv * dvx;
                            taps.scatter(gv, gx.plane_mut(n, ch));
                        }
                        g_m[k] = acc_m;
                        g_off.plane_mut(n, off)[site] = acc_y;
                        g_off.plane_mut(n, off + 1)[site] = acc_x;
                    }
                    match cfg.normalization {
                        Normalization::Softmax => softmax_backward(&m, &g_m, &mut g_l),
                        Normalization::Sigmoid => {
                            for k in 0..k_count {
                                g_l[k] = g_m[k] * m[k] * (1.0 - m[k]);
                            }
                        }
                    }
                    for (k, &v) in g_l.iter().enumerate() {
                        g_logits.plane_mut(n, SamplingField::mask_channel(cfg, g, k))[site] = v;
                    }
                }
            }
        }
    }
    Ok(DcnGrads { input: gx, offsets: g_off, mask_logits: g_logits, weights: weight_grads })
}
