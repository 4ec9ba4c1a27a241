#![allow(dead_code)]

use dcnv3_core::dcn::{Ablation, DcnConfig, DcnWeights, Projection, SamplingField};
use dcnv3_core::params::{fill_uniform, seeded_rng, SeededRng};
use dcnv3_core::{Shape4, Tensor4};
use rand::Rng;

pub fn random_tensor(shape: impl Into<Shape4>, scale: f64, rng: &mut SeededRng) -> Tensor4 {
    let mut t = Tensor4::zeros(shape);
    fill_uniform(t.data_mut(), scale, rng);
    t
}

pub fn random_weights(cfg: &DcnConfig, rng: &mut SeededRng) -> DcnWeights {
    let mut w = DcnWeights::zeros(cfg, true);
    let bound = 1.0 / (cfg.channels as f64).sqrt();
    match &mut w.projection {
        Projection::Shared(p) => {
            fill_uniform(&mut p.matrix, bound, rng);
            fill_uniform(p.bias.as_mut().unwrap(), 0.1, rng);
        }
        Projection::PerPoint { weights, bias } => {
            for p in weights {
                fill_uniform(&mut p.matrix, bound, rng);
            }
            fill_uniform(bias.as_mut().unwrap(), 0.1, rng);
        }
    }
    w
}

/// Offsets whose fractional part lies in (0.1, 0.4) so no sample sits on a
/// bilinear kink, with a random integer displacement in [-2, 2].
pub fn kink_free_offsets(shape: Shape4, rng: &mut SeededRng) -> Tensor4 {
    let mut t = Tensor4::zeros(shape);
    for v in t.data_mut() {
        let whole = rng.random_range(-2i32..=2) as f64;
        let frac = rng.random_range(0.1..0.4);
        *v = whole + frac;
    }
    t
}

/// A random operator instance: input, field, weights.
pub struct Instance {
    pub cfg: DcnConfig,
    pub x: Tensor4,
    pub field: SamplingField,
    pub w: DcnWeights,
}

pub fn random_instance(n: usize, c: usize, g: usize, h: usize, w: usize, row: Ablation, seed: u64) -> Instance {
    let mut rng = seeded_rng(seed);
    let cfg = DcnConfig::new(c, g).with_ablation(row);
    let x = random_tensor((n, c, h, w), 1.0, &mut rng);
    let (ho, wo) = cfg.out_dims(h, w);
    let offsets = kink_free_offsets(Shape4::new(n, cfg.offset_channels(), ho, wo), &mut rng);
    let mask_logits = random_tensor((n, cfg.mask_channels(), ho, wo), 2.0, &mut rng);
    let weights = random_weights(&cfg, &mut rng);
    Instance { cfg, x, field: SamplingField { offsets, mask_logits }, w: weights }
}
