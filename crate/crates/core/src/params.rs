//! Named-parameter traversal and closed-form parameter counting.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

/// Anything that owns trainable tensors.
///
/// Visiting order is fixed by each implementor and is the order used by the
/// weight file format and by SGD updates.
pub trait Parameters {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64]));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64]));

    fn num_params(&self) -> usize {
        let mut total = 0;
        self.visit("", &mut |_, _, data| total += data.len());
        total
    }

    /// `(name, dims)` for every tensor, in visiting order.
    fn tensor_specs(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        self.visit("", &mut |name, dims, _| out.push((String::from(name), dims.to_vec())));
        out
    }

    /// Copies every tensor into one flat vector in visiting order.
    fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.visit("", &mut |_, _, data| out.extend_from_slice(data));
        out
    }

    /// Sets every scalar from `values` in visiting order. Returns the number consumed.
    fn assign_flat(&mut self, values: &[f64]) -> usize {
        let mut at = 0;
        self.visit_mut("", &mut |_, _, data| {
            let end = (at + data.len()).min(values.len());
            data[..end - at].copy_from_slice(&values[at..end]);
            at = end;
        });
        at
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        String::from(name)
    } else {
        format!("{prefix}.{name}")
    }
}

/// `a += scale * b` over every tensor of two structurally identical parameter sets.
pub fn axpy<P: Parameters>(target: &mut P, scale: f64, source: &P) {
    let flat = source.flatten();
    let mut at = 0;
    target.visit_mut("", &mut |_, _, data| {
        let len = data.len();
        for (d, s) in data.iter_mut().zip(&flat[at..at + len]) {
            *d += scale * s;
        }
        at += len;
    });
}

/// Deterministic generator used for weight initialization and synthetic data.
pub type SeededRng = rand_chacha::ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> SeededRng {
    use rand::SeedableRng;
    SeededRng::seed_from_u64(seed)
}

/// Fills `data` from `U(−bound, bound)`.
pub fn fill_uniform(data: &mut [f64], bound: f64, rng: &mut SeededRng) {
    use rand::Rng;
    for v in data {
        *v = rng.random_range(-bound..bound);
    }
}

/// Fan-in scaled uniform init of a linear map (`bound = 1/√in_dim`), zero bias.
pub fn init_linear(w: &mut crate::ops::LinearWeights, rng: &mut SeededRng) {
    let bound = 1.0 / libm::sqrt(w.in_dim as f64);
    fill_uniform(&mut w.matrix, bound, rng);
}

/// Fan-in scaled uniform init of a convolution (`fan_in = in_c_per_group·kh·kw`), zero bias.
pub fn init_conv(w: &mut crate::ops::Conv2dWeights, rng: &mut SeededRng) {
    let bound = 1.0 / libm::sqrt((w.in_c_per_group * w.kh * w.kw) as f64);
    fill_uniform(&mut w.kernel, bound, rng);
}
