use alloc::vec;
use alloc::vec::Vec;

use crate::params::{join, Parameters};
use crate::{Error, Result, Shape4, Tensor4};

/// Grouped 2-D cross-correlation weights with zero padding.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2dWeights {
    pub out_c: usize,
    pub in_c_per_group: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
    /// `out_c × in_c_per_group × kh × kw`, row-major.
    pub kernel: Vec<f64>,
    pub bias: Option<Vec<f64>>,
}

impl Conv2dWeights {
    #[allow(clippy::too_many_arguments)]
    pub fn zeros(
        in_c: usize,
        out_c: usize,
        k: usize,
        stride: usize,
        padding: usize,
        groups: usize,
        with_bias: bool,
    ) -> Result<Self> {
        if groups == 0 || in_c % groups != 0 || out_c % groups != 0 {
            return Err(Error::Config(alloc::format!(
                "conv2d: channels in={in_c} out={out_c} not divisible by groups={groups}"
            )));
        }
        if k % 2 == 0 || stride == 0 {
            return Err(Error::Config(alloc::format!("conv2d: kernel {k} must be odd and stride positive")));
        }
        let in_c_per_group = in_c / groups;
        Ok(Self {
            out_c,
            in_c_per_group,
            kh: k,
            kw: k,
            stride,
            padding,
            groups,
            kernel: vec![0.0; out_c * in_c_per_group * k * k],
            bias: with_bias.then(|| vec![0.0; out_c]),
        })
    }

    pub fn in_c(&self) -> usize {
        self.in_c_per_group * self.groups
    }

    fn validate(&self, in_c: usize) -> Result<()> {
        if self.groups == 0 || self.out_c % self.groups != 0 {
            return Err(Error::Config(alloc::format!(
                "conv2d: out_c={} not divisible by groups={}",
                self.out_c,
                self.groups
            )));
        }
        if self.in_c() != in_c {
            return Err(Error::shape("conv2d input channels", self.in_c(), in_c));
        }
        if self.kh % 2 == 0 || self.kw % 2 == 0 || self.stride == 0 {
            return Err(Error::Config("conv2d: kernel sides must be odd and stride positive".into()));
        }
        if self.kernel.len() != self.out_c * self.in_c_per_group * self.kh * self.kw {
            return Err(Error::shape("conv2d kernel", self.out_c * self.in_c_per_group * self.kh * self.kw, self.kernel.len()));
        }
        Ok(())
    }

    pub fn out_shape(&self, s: Shape4) -> Shape4 {
        Shape4::new(
            s.n,
            self.out_c,
            conv_out_dim(s.h, self.kh, self.stride, self.padding),
            conv_out_dim(s.w, self.kw, self.stride, self.padding),
        )
    }

    #[inline]
    fn k_index(&self, oc: usize, ic: usize, i: usize, j: usize) -> usize {
        ((oc * self.in_c_per_group + ic) * self.kh + i) * self.kw + j
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            kernel: vec![0.0; self.kernel.len()],
            bias: self.bias.as_ref().map(|b| vec![0.0; b.len()]),
            ..*self
        }
    }
}

impl Parameters for Conv2dWeights {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        f(&join(prefix, "weight"), &[self.out_c, self.in_c_per_group, self.kh, self.kw], &self.kernel);
        if let Some(b) = &self.bias {
            f(&join(prefix, "bias"), &[self.out_c], b);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        f(&join(prefix, "weight"), &[self.out_c, self.in_c_per_group, self.kh, self.kw], &mut self.kernel);
        if let Some(b) = &mut self.bias {
            f(&join(prefix, "bias"), &[self.out_c], b);
        }
    }
}

/// `floor((len + 2·pad − k) / stride) + 1`, or 0 when the kernel does not fit.
pub fn conv_out_dim(len: usize, k: usize, stride: usize, pad: usize) -> usize {
    let padded = len + 2 * pad;
    if padded < k {
        0
    } else {
        (padded - k) / stride + 1
    }
}

/// Input index range `[lo, hi)` of output positions `o` whose tap `t` lands in bounds.
#[inline]
fn valid_outputs(t: usize, stride: usize, pad: usize, in_len: usize, out_len: usize) -> (usize, usize) {
    // input = o*stride + t - pad must lie in [0, in_len)
    let lo = if t >= pad { 0 } else { (pad - t).div_ceil(stride) };
    let hi = if in_len + pad > t { ((in_len + pad - t - 1) / stride + 1).min(out_len) } else { 0 };
    (lo, hi.max(lo))
}

pub fn conv2d(x: &Tensor4, w: &Conv2dWeights) -> Result<Tensor4> {
    let s = x.shape();
    w.validate(s.c)?;
    let os = w.out_shape(s);
    let mut out = Tensor4::zeros(os);
    let out_per_group = w.out_c / w.groups;
    for n in 0..s.n {
        for oc in 0..w.out_c {
            let g = oc / out_per_group;
            let dst = out.plane_mut(n, oc);
            for ic in 0..w.in_c_per_group {
                let src = x.plane(n, g * w.in_c_per_group + ic);
                for i in 0..w.kh {
                    let (oh_lo, oh_hi) = valid_outputs(i, w.stride, w.padding, s.h, os.h);
                    for j in 0..w.kw {
                        let kv = w.kernel[w.k_index(oc, ic, i, j)];
                        let (ow_lo, ow_hi) = valid_outputs(j, w.stride, w.padding, s.w, os.w);
                        for oh in oh_lo..oh_hi {
                            let ih = oh * w.stride + i - w.padding;
                            let row = &src[ih * s.w..(ih + 1) * s.w];
                            let drow = &mut dst[oh * os.w..(oh + 1) * os.w];
                            for ow in ow_lo..ow_hi {
                                drow[ow] += kv * row[ow * w.stride + j - w.padding];
                            }
                        }
                    }
                }
            }
            if let Some(b) = &w.bias {
                dst.iter_mut().for_each(|v| *v += b[oc]);
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv2dGrads {
    pub input: Tensor4,
    pub weights: Conv2dWeights,
}

/// Pullback of [`conv2d`].
pub fn conv2d_backward(x: &Tensor4, w: &Conv2dWeights, grad_out: &Tensor4) -> Result<Conv2dGrads> {
    let s = x.shape();
    w.validate(s.c)?;
    let os = w.out_shape(s);
    if grad_out.shape() != os {
        return Err(Error::shape("conv2d_backward", os, grad_out.shape()));
    }
    let mut gx = Tensor4::zeros(s);
    let mut gw = w.zeros_like();
    let out_per_group = w.out_c / w.groups;
    for n in 0..s.n {
        for oc in 0..w.out_c {
            let g = oc / out_per_group;
            let go = grad_out.plane(n, oc);
            if let Some(gb) = &mut gw.bias {
                gb[oc] += go.iter().sum::<f64>();
            }
            for ic in 0..w.in_c_per_group {
                let cin = g * w.in_c_per_group + ic;
                for i in 0..w.kh {
                    let (oh_lo, oh_hi) = valid_outputs(i, w.stride, w.padding, s.h, os.h);
                    for j in 0..w.kw {
                        let ki = w.k_index(oc, ic, i, j);
                        let kv = w.kernel[ki];
                        let (ow_lo, ow_hi) = valid_outputs(j, w.stride, w.padding, s.w, os.w);
                        let mut acc = 0.0;
                        {
                            let src = x.plane(n, cin);
                            for oh in oh_lo..oh_hi {
                                let ih = oh * w.stride + i - w.padding;
                                for ow in ow_lo..ow_hi {
                                    acc += go[oh * os.w + ow] * src[ih * s.w + ow * w.stride + j - w.padding];
                                }
                            }
                        }
                        gw.kernel[ki] += acc;
                        let dst = gx.plane_mut(n, cin);
                        for oh in oh_lo..oh_hi {
                            let ih = oh * w.stride + i - w.padding;
                            for ow in ow_lo..ow_hi {
                                dst[ih * s.w + ow * w.stride + j - w.padding] += kv * go[oh * os.w + ow];
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(Conv2dGrads { input: gx, weights: gw })
}
