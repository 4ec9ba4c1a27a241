//! Cross-entropy loss, plain SGD and a synthetic classification task.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::model::{count_params, Model, ModelConfig};
use crate::params::{axpy, seeded_rng};
use crate::{Error, Result, Shape4, Tensor4};

/// Mean softmax cross-entropy over the batch and its gradient w.r.t. the logits.
pub fn cross_entropy(logits: &Tensor4, labels: &[usize]) -> Result<(f64, Tensor4)> {
    let s = logits.shape();
    if s.h != 1 || s.w != 1 || labels.len() != s.n {
        return Err(Error::shape("cross_entropy", (labels.len(), s.c, 1, 1), s));
    }
    let mut grad = Tensor4::zeros(s);
    let mut probs = vec![0.0; s.c];
    let mut loss = 0.0;
    let inv_n = 1.0 / s.n as f64;
    for (n, &label) in labels.iter().enumerate() {
        if label >= s.c {
            return Err(Error::Input(alloc::format!("label {label} out of range for {} classes", s.c)));
        }
        let row = logits.item(n);
        crate::ops::softmax(row, &mut probs);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + libm::log(row.iter().map(|&v| libm::exp(v - max)).sum::<f64>());
        loss += lse - row[label];
        for (c, &p) in probs.iter().enumerate() {
            *grad.at_mut(n, c, 0, 0) = (p - if c == label { 1.0 } else { 0.0 }) * inv_n;
        }
    }
    Ok((loss * inv_n, grad))
}

/// `params −= lr · grads`.
pub fn sgd_step(model: &mut Model, grads: &Model, lr: f64) {
    axpy(model, -lr, grads);
}

/// One forward/backward/update on a batch; returns the pre-update loss.
pub fn train_step(model: &mut Model, x: &Tensor4, labels: &[usize], lr: f64) -> Result<f64> {
    let (logits, tape) = model.forward_tape(x, crate::model::Depth::Logits)?;
    let (loss, g_logits) = cross_entropy(&logits, labels)?;
    let (_, grads) = model.backward(&tape, &g_logits)?;
    sgd_step(model, &grads, lr);
    Ok(loss)
}

pub const TOY_CLASSES: usize = 10;
pub const TOY_SIZE: usize = 32;

const PALETTE: [[f64; 3]; TOY_CLASSES] = [
    [1.0, -1.0, -1.0],
    [-1.0, 1.0, -1.0],
    [-1.0, -1.0, 1.0],
    [1.0, 1.0, -1.0],
    [1.0, -1.0, 1.0],
    [-1.0, 1.0, 1.0],
    [1.0, 1.0, 1.0],
    [-1.0, -1.0, -1.0],
    [1.0, 0.0, -1.0],
    [0.0, -1.0, 1.0],
];

/// `per_class` images of each of ten classes: a Gaussian blob in the class
/// colour at a jittered position over uniform noise, 32×32 RGB. Labels cycle
/// through the classes.
pub fn synthetic_dataset(per_class: usize, seed: u64) -> (Tensor4, Vec<usize>) {
    let mut rng = seeded_rng(seed);
    let n = per_class * TOY_CLASSES;
    let size = TOY_SIZE;
    let mut x = Tensor4::zeros(Shape4::new(n, 3, size, size));
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % TOY_CLASSES;
        labels.push(class);
        let cy = rng.random_range(10.0..22.0);
        let cx = rng.random_range(10.0..22.0);
        let radius: f64 = rng.random_range(5.0..8.0);
        for c in 0..3 {
            let colour = PALETTE[class][c];
            for y in 0..size {
                for xx in 0..size {
                    let d2 = (y as f64 - cy) * (y as f64 - cy) + (xx as f64 - cx) * (xx as f64 - cx);
                    let blob = libm::exp(-d2 / (2.0 * radius * radius));
                    let noise = rng.random_range(-0.2..0.2);
                    *x.at_mut(i, c, y, xx) = colour * blob + noise;
                }
            }
        }
    }
    (x, labels)
}


/// Largest model `train_toy` accepts.
pub const TOY_PARAM_LIMIT: u64 = 2_000_000;

/// Settings for [`train_toy`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToyRun {
    pub steps: usize,
    pub lr: f64,
    pub seed: u64,
    /// Images per class in the (full-batch) training set.
    pub per_class: usize,
}

impl Default for ToyRun {
    fn default() -> Self {
        Self { steps: 200, lr: 0.05, seed: 0, per_class: 2 }
    }
}

/// Full-batch SGD on the synthetic task. Returns the loss before each step
/// and the trained model.
///
/// `on_step(step, loss)` is called after every update.
pub fn train_toy(cfg: &ModelConfig, run: &ToyRun, on_step: &mut dyn FnMut(usize, f64)) -> Result<(Vec<f64>, Model)> {
    if cfg.num_classes != TOY_CLASSES {
        return Err(Error::Config(alloc::format!("toy task has {TOY_CLASSES} classes, config has {}", cfg.num_classes)));
    }
    let params = count_params(cfg)?.closed_form_total;
    if params > TOY_PARAM_LIMIT {
        return Err(Error::Config(alloc::format!(
            "refusing to train a {params}-parameter model: toy training is limited to {TOY_PARAM_LIMIT}"
        )));
    }
    let mut model = Model::build(cfg)?;
    let (x, labels) = synthetic_dataset(run.per_class, run.seed);
    let mut losses = Vec::with_capacity(run.steps);
    for step in 0..run.steps {
        let loss = train_step(&mut model, &x, &labels, run.lr)?;
        losses.push(loss);
        on_step(step, loss);
    }
    Ok((losses, model))
}
