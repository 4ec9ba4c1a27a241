use alloc::vec;

use super::{bilinear_sample, check_inputs, DcnConfig, DcnWeights, Normalization, Projection, SamplingField};
use crate::ops::{sigmoid, softmax};
use crate::{Result, Tensor4};

/// Modulation scalars `m_gk` of one site and group.
pub fn naive_modulation(field: &SamplingField, cfg: &DcnConfig, n: usize, g: usize, ho: usize, wo: usize) -> alloc::vec::Vec<f64> {
    let logits: alloc::vec::Vec<f64> = (0..cfg.points())
        .map(|k| field.mask_logits.at(n, SamplingField::mask_channel(cfg, g, k), ho, wo))
        .collect();
    let mut m = vec![0.0; logits.len()];
    match cfg.normalization {
        Normalization::Softmax => softmax(&logits, &mut m),
        Normalization::Sigmoid => m.iter_mut().zip(&logits).for_each(|(m, &l)| *m = sigmoid(l)),
    }
    m
}

/// Literal loop transcription of the operator, one output site at a time.
///
/// Used as the correctness oracle for [`super::dcnv3_forward`]; every output
/// element is accumulated in the same order as the optimized kernel.
pub fn dcnv3_naive_forward(x: &Tensor4, field: &SamplingField, w: &DcnWeights, cfg: &DcnConfig) -> Result<Tensor4> {
    let out_shape = check_inputs(x, field, w, cfg)?;
    let s = x.shape();
    let c_total = cfg.channels;
    let groups = cfg.effective_groups();
    let cg = cfg.group_dim();
    let ks = cfg.kernel;
    let half = (ks - 1) / 2;
    let mut out = Tensor4::zeros(out_shape);
    let mut y = vec![0.0; c_total];
    for n in 0..s.n {
        for ho in 0..out_shape.h {
            for wo in 0..out_shape.w {
                // p0: centre of the sampling grid in input coordinates.
                let p0_y = (ho * cfg.stride + half * cfg.dilation) as f64 - cfg.pad as f64;
                let p0_x = (wo * cfg.stride + half * cfg.dilation) as f64 - cfg.pad as f64;
                let m: alloc::vec::Vec<_> = (0..groups).map(|g| naive_modulation(field, cfg, n, g, ho, wo)).collect();
                let sample = |g: usize, k: usize, c: usize| {
                    let pk_y = ((k / ks) as f64 - half as f64) * cfg.dilation as f64;
                    let pk_x = ((k % ks) as f64 - half as f64) * cfg.dilation as f64;
                    let off = SamplingField::offset_channel(cfg, g, k);
                    let dy = field.offsets.at(n, off, ho, wo);
                    let dx = field.offsets.at(n, off + 1, ho, wo);
                    bilinear_sample(x.plane(n, g * cg + c), s.h, s.w, (p0_y + pk_y) + dy, (p0_x + pk_x) + dx)
                };
                match &w.projection {
                    Projection::Shared(proj) => {
                        let mut agg = vec![0.0; c_total];
                        for g in 0..groups {
                            for c in 0..cg {
                                let mut acc = 0.0;
                                for k in 0..cfg.points() {
                                    acc += m[g][k] * sample(g, k, c);
                                }
                                agg[g * cg + c] = acc;
                            }
                        }
                        proj.apply_vec(&agg, &mut y);
                    }
                    Projection::PerPoint { weights, bias } => {
                        y.fill(0.0);
                        for (k, wk) in weights.iter().enumerate() {
                            let mut s_k = vec![0.0; c_total];
                            for g in 0..groups {
                                for c in 0..cg {
                                    s_k[g * cg + c] = m[g][k] * sample(g, k, c);
                                }
                            }
                            for (o, yo) in y.iter_mut().enumerate() {
                                for (i, sv) in s_k.iter().enumerate() {
                                    *yo += wk.get(o, i) * sv;
                                }
                            }
                        }
                        if let Some(b) = bias {
                            y.iter_mut().zip(b).for_each(|(v, b)| *v += b);
                        }
                    }
                }
                for (o, &v) in y.iter().enumerate() {
                    *out.at_mut(n, o, ho, wo) = v;
                }
            }
        }
    }
    Ok(out)
}
