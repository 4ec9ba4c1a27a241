use alloc::vec;
use alloc::vec::Vec;

use crate::params::{join, Parameters};
use crate::{Error, Result, Shape4, Tensor4};

/// A per-site linear map `out = matrix · x (+ bias)` applied over the channel axis.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearWeights {
    pub in_dim: usize,
    pub out_dim: usize,
    /// Row-major `out_dim × in_dim`.
    pub matrix: Vec<f64>,
    pub bias: Option<Vec<f64>>,
}

impl LinearWeights {
    pub fn zeros(in_dim: usize, out_dim: usize, with_bias: bool) -> Self {
        Self {
            in_dim,
            out_dim,
            matrix: vec![0.0; in_dim * out_dim],
            bias: with_bias.then(|| vec![0.0; out_dim]),
        }
    }

    pub fn identity(dim: usize, with_bias: bool) -> Self {
        let mut w = Self::zeros(dim, dim, with_bias);
        for i in 0..dim {
            w.matrix[i * dim + i] = 1.0;
        }
        w
    }

    pub fn from_matrix(in_dim: usize, out_dim: usize, matrix: Vec<f64>, bias: Option<Vec<f64>>) -> Result<Self> {
        if matrix.len() != in_dim * out_dim {
            return Err(Error::shape("LinearWeights", (out_dim, in_dim), matrix.len()));
        }
        if let Some(b) = &bias {
            if b.len() != out_dim {
                return Err(Error::shape("LinearWeights bias", out_dim, b.len()));
            }
        }
        Ok(Self { in_dim, out_dim, matrix, bias })
    }

    #[inline]
    pub fn get(&self, out: usize, inp: usize) -> f64 {
        self.matrix[out * self.in_dim + inp]
    }

    /// Applies the map to a single channel vector, summing inputs in ascending order.
    pub fn apply_vec(&self, x: &[f64], out: &mut [f64]) {
        for (o, y) in out.iter_mut().enumerate() {
            let row = &self.matrix[o * self.in_dim..(o + 1) * self.in_dim];
            let mut acc = 0.0;
            for (m, v) in row.iter().zip(x) {
                acc += m * v;
            }
            *y = match &self.bias {
                Some(b) => acc + b[o],
                None => acc,
            };
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.in_dim, self.out_dim, self.bias.is_some())
    }
}

impl Parameters for LinearWeights {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        f(&join(prefix, "weight"), &[self.out_dim, self.in_dim], &self.matrix);
        if let Some(b) = &self.bias {
            f(&join(prefix, "bias"), &[self.out_dim], b);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        f(&join(prefix, "weight"), &[self.out_dim, self.in_dim], &mut self.matrix);
        if let Some(b) = &mut self.bias {
            f(&join(prefix, "bias"), &[self.out_dim], b);
        }
    }
}

pub type LinearGrads = (Tensor4, LinearWeights);

pub fn linear_project(x: &Tensor4, w: &LinearWeights) -> Result<Tensor4> {
    let s = x.shape();
    if s.c != w.in_dim {
        return Err(Error::shape("linear_project", (s.n, w.in_dim, s.h, s.w), s));
    }
    let plane = s.plane();
    let mut out = Tensor4::zeros(Shape4::new(s.n, w.out_dim, s.h, s.w));
    for n in 0..s.n {
        for o in 0..w.out_dim {
            let dst = out.plane_mut(n, o);
            for i in 0..w.in_dim {
                let m = w.get(o, i);
                let src = x.plane(n, i);
                for p in 0..plane {
                    dst[p] += m * src[p];
                }
            }
            if let Some(b) = &w.bias {
                dst.iter_mut().for_each(|v| *v += b[o]);
            }
        }
    }
    Ok(out)
}

/// Pullback of [`linear_project`]: gradients for the input and the weights.
pub fn linear_project_backward(x: &Tensor4, w: &LinearWeights, grad_out: &Tensor4) -> Result<LinearGrads> {
    let s = x.shape();
    let expect = Shape4::new(s.n, w.out_dim, s.h, s.w);
    if grad_out.shape() != expect {
        return Err(Error::shape("linear_project_backward", expect, grad_out.shape()));
    }
    let mut gx = Tensor4::zeros(s);
    let mut gw = w.zeros_like();
    for n in 0..s.n {
        for o in 0..w.out_dim {
            let go = grad_out.plane(n, o);
            if let Some(gb) = &mut gw.bias {
                gb[o] += go.iter().sum::<f64>();
            }
            for i in 0..w.in_dim {
                let xi = x.plane(n, i);
                gw.matrix[o * w.in_dim + i] += go.iter().zip(xi).map(|(g, v)| g * v).sum::<f64>();
                let m = w.get(o, i);
                let gxi = gx.plane_mut(n, i);
                for (d, g) in gxi.iter_mut().zip(go) {
                    *d += m * g;
                }
            }
        }
    }
    Ok((gx, gw))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_on_ones() {
        let x = Tensor4::full((1, 2, 1, 1), 1.0);
        let y = linear_project(&x, &LinearWeights::identity(2, false)).unwrap();
        assert_eq!(y.data(), &[1.0, 1.0]);
    }

    #[test]
    fn hand_matrix_vector() {
        let x = Tensor4::from_vec((1, 2, 1, 1), vec![3.0, 5.0]).unwrap();
        let w = LinearWeights::from_matrix(2, 2, vec![1.0, 1.0, 1.0, -1.0], None).unwrap();
        assert_eq!(linear_project(&x, &w).unwrap().data(), &[8.0, -2.0]);
    }

    #[test]
    fn zero_map_yields_bias() {
        let x = Tensor4::from_fn((2, 3, 2, 2), |n, c, h, w| (n + c + h * w) as f64 - 1.5);
        let mut w = LinearWeights::zeros(3, 2, true);
        w.bias = Some(vec![0.25, -4.0]);
        let y = linear_project(&x, &w).unwrap();
        for n in 0..2 {
            assert!(y.plane(n, 0).iter().all(|&v| v == 0.25));
            assert!(y.plane(n, 1).iter().all(|&v| v == -4.0));
        }
    }

    #[test]
    fn mismatch_names_both_shapes() {
        let x = Tensor4::zeros((1, 3, 2, 2));
        let err = linear_project(&x, &LinearWeights::zeros(4, 2, false)).unwrap_err();
        let msg = alloc::format!("{err}");
        assert!(msg.contains("4") && msg.contains("c: 3"), "{msg}");
    }
}
