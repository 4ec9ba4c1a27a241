use crate::{Error, Result, Tensor4};

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Exact GELU, `x·Φ(x)` with Φ the standard normal CDF (erf form, not the tanh fit).
#[inline]
pub fn gelu_scalar(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * core::f64::consts::FRAC_1_SQRT_2))
}

#[inline]
pub fn gelu_scalar_derivative(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x * core::f64::consts::FRAC_1_SQRT_2));
    let pdf = FRAC_1_SQRT_2PI * libm::exp(-0.5 * x * x);
    cdf + x * pdf
}

pub fn gelu(x: &Tensor4) -> Tensor4 {
    x.map(gelu_scalar)
}

/// Pullback of [`gelu`] at input `x`.
pub fn gelu_backward(x: &Tensor4, grad_out: &Tensor4) -> Result<Tensor4> {
    if x.shape() != grad_out.shape() {
        return Err(Error::shape("gelu_backward", x.shape(), grad_out.shape()));
    }
    let mut g = grad_out.clone();
    for (gi, &xi) in g.data_mut().iter_mut().zip(x.data()) {
        *gi *= gelu_scalar_derivative(xi);
    }
    Ok(g)
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// Max-subtracted softmax of `logits` into `out`. Both slices must have equal length ≥ 1.
pub fn softmax(logits: &[f64], out: &mut [f64]) {
    debug_assert_eq!(logits.len(), out.len());
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = libm::exp(l - max);
        sum += *o;
    }
    let inv = 1.0 / sum;
    out.iter_mut().for_each(|o| *o *= inv);
}

/// Pullback of [`softmax`] given its output `probs`: `p ⊙ (g − ⟨p, g⟩)`.
pub fn softmax_backward(probs: &[f64], grad_out: &[f64], grad_in: &mut [f64]) {
    let dot: f64 = probs.iter().zip(grad_out).map(|(p, g)| p * g).sum();
    for ((gi, p), g) in grad_in.iter_mut().zip(probs).zip(grad_out) {
        *gi = p * (g - dot);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gelu_reference_points() {
        assert_eq!(gelu_scalar(0.0), 0.0);
        // 1·Φ(1) = 0.841344746068542948585232545632...
        assert!((gelu_scalar(1.0) - 0.841_344_746_068_543).abs() < 1e-15);
        assert!(gelu_scalar(-10.0).abs() < 1e-9);
    }

    #[test]
    fn uniform_logits() {
        let mut out = [0.0; 9];
        softmax(&[0.0; 9], &mut out);
        assert!(out.iter().all(|&v| (v - 1.0 / 9.0).abs() < 1e-16));
    }

    #[test]
    fn ln2_logit_gets_double_weight() {
        let mut logits = [0.0; 9];
        logits[0] = core::f64::consts::LN_2;
        let mut out = [0.0; 9];
        softmax(&logits, &mut out);
        assert!((out[0] - 0.2).abs() < 1e-15);
        assert!(out[1..].iter().all(|&v| (v - 0.1).abs() < 1e-15));
    }

    #[test]
    fn shift_invariance() {
        let logits = [0.3, -1.2, 2.5, 0.0, 0.7];
        let shifted = logits.map(|l| l + 123.456);
        let (mut a, mut b) = ([0.0; 5], [0.0; 5]);
        softmax(&logits, &mut a);
        softmax(&shifted, &mut b);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn sigmoid_saturates_without_overflow() {
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(-40.0) < 1e-17);
        assert_eq!(sigmoid(800.0), 1.0);
        assert_eq!(sigmoid(0.0), 0.5);
    }
}
