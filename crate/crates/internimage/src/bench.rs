//! Wall-clock micro-benchmarks: discarded warmups, then timed repetitions.

use std::time::Instant;

use anyhow::{ensure, Result};
use dcnv3_core::dcn::{dcnv3_forward, dcnv3_naive_forward, DcnConfig, DcnWeights, SamplingField};
use dcnv3_core::model::{Model, ModelConfig};
use dcnv3_core::params::{fill_uniform, seeded_rng};
use dcnv3_core::{Shape4, Tensor4};

pub const MIN_WARMUPS: usize = 2;
pub const MIN_REPS: usize = 5;

/// Timing summary of one configuration. Times are seconds per call.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchResult {
    pub op: String,
    pub shape: Shape4,
    pub reps: usize,
    pub min: f64,
    pub median: f64,
    pub mean: f64,
    /// Images per second at the median time.
    pub throughput: f64,
    /// `naive median / this median`, where a naive baseline exists.
    pub speedup: Option<f64>,
}

/// Runs `f` `warmups` times untimed, then `reps` times timed.
pub fn bench(op: &str, shape: Shape4, warmups: usize, reps: usize, mut f: impl FnMut()) -> Result<BenchResult> {
    ensure!(warmups >= MIN_WARMUPS, "need at least {MIN_WARMUPS} warmup runs, got {warmups}");
    ensure!(reps >= MIN_REPS, "need at least {MIN_REPS} timed repetitions, got {reps}");
    for _ in 0..warmups {
        f();
    }
    let mut times: Vec<f64> = (0..reps)
        .map(|_| {
            let t = Instant::now();
            f();
            t.elapsed().as_secs_f64()
        })
        .collect();
    times.sort_by(f64::total_cmp);
    let median = if reps % 2 == 1 { times[reps / 2] } else { 0.5 * (times[reps / 2 - 1] + times[reps / 2]) };
    let mean = times.iter().sum::<f64>() / reps as f64;
    Ok(BenchResult {
        op: op.to_string(),
        shape,
        reps,
        min: times[0],
        median,
        mean,
        throughput: shape.n as f64 / median,
        speedup: None,
    })
}

/// Optimized and naive DCNv3 forward on random data of `shape`; the
/// optimized row carries the speedup over naive.
pub fn bench_dcnv3(shape: Shape4, groups: usize, warmups: usize, reps: usize, seed: u64) -> Result<[BenchResult; 2]> {
    let cfg = DcnConfig::new(shape.c, groups);
    cfg.validate()?;
    let mut rng = seeded_rng(seed);
    let mut x = Tensor4::zeros(shape);
    fill_uniform(x.data_mut(), 1.0, &mut rng);
    let mut field = SamplingField::zeros(&cfg, shape.n, shape.h, shape.w);
    fill_uniform(field.offsets.data_mut(), 2.0, &mut rng);
    fill_uniform(field.mask_logits.data_mut(), 1.0, &mut rng);
    let w = DcnWeights::identity(&cfg);

    let mut fast = bench("dcnv3", shape, warmups, reps, || {
        std::hint::black_box(dcnv3_forward(&x, &field, &w, &cfg).unwrap());
    })?;
    let naive = bench("dcnv3_naive", shape, warmups, reps, || {
        std::hint::black_box(dcnv3_naive_forward(&x, &field, &w, &cfg).unwrap());
    })?;
    fast.speedup = Some(naive.median / fast.median);
    Ok([fast, naive])
}

/// Full forward pass of a freshly built model on `n` images of `size × size`.
pub fn bench_model(cfg: &ModelConfig, n: usize, size: usize, warmups: usize, reps: usize) -> Result<BenchResult> {
    let model = Model::build(cfg)?;
    let shape = Shape4::new(n, cfg.in_channels, size, size);
    let mut x = Tensor4::zeros(shape);
    fill_uniform(x.data_mut(), 1.0, &mut seeded_rng(cfg.seed));
    bench(&format!("model-{}", cfg.name), shape, warmups, reps, || {
        std::hint::black_box(model.forward(&x).unwrap());
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn enforces_methodology_floor() {
        let s = Shape4::new(1, 1, 1, 1);
        assert!(bench("x", s, 1, 5, || {}).is_err());
        assert!(bench("x", s, 2, 4, || {}).is_err());
        let mut calls = 0;
        let r = bench("x", s, 2, 5, || calls += 1).unwrap();
        assert_eq!(calls, 7);
        assert!(r.min <= r.median && r.median <= r.mean.max(r.median));
    }

    #[test]
    fn dcn_rows_report_speedup() {
        let [fast, naive] = bench_dcnv3(Shape4::new(1, 8, 8, 8), 2, 2, 5, 0).unwrap();
        assert!(fast.throughput > 0.0 && naive.throughput > 0.0);
        assert!(fast.speedup.unwrap() > 0.0);
        assert!(naive.speedup.is_none());
    }
}
