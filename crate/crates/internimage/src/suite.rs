//! Finite-difference gradient checks and naive-kernel comparisons, as run by
//! the `gradcheck` and `oracle` commands.

use std::fmt;

use anyhow::Result;
use dcnv3_core::block::{basic_block, basic_block_backward, basic_block_forward, BlockParams};
use dcnv3_core::dcn::{
    dcnv2_forward, dcnv3_backward, dcnv3_forward, dcnv3_naive_forward, Ablation, DcnConfig, DcnWeights, Projection,
    SamplingField,
};
use dcnv3_core::gradcheck::{check_all_vjp, check_indices_vjp, GradCheck};
use dcnv3_core::model::{Depth, Model, ModelConfig, StackConfig};
use dcnv3_core::numeric::max_ulp_distance;
use dcnv3_core::params::{fill_uniform, seeded_rng, Parameters, SeededRng};
use dcnv3_core::Tensor4;
use rand::seq::index::sample;
use rand::Rng;

/// Relative-error ceiling for the operator and the block.
pub const OP_TOLERANCE: f64 = 1e-5;
/// Relative-error ceiling for the full model.
pub const MODEL_TOLERANCE: f64 = 1e-4;
/// Steps above this make truncation error, not the gradient, dominate.
pub const LARGE_STEP: f64 = 1e-4;
/// Largest acceptable naive-vs-optimized deviation.
pub const MAX_ULPS: u64 = 4;
/// Parameters sampled in the full-model check.
pub const MODEL_SAMPLES: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scope {
    Op,
    Block,
    Model,
}

impl Scope {
    pub const ALL: [Scope; 3] = [Scope::Op, Scope::Block, Scope::Model];

    pub fn tolerance(self) -> f64 {
        match self {
            Scope::Op | Scope::Block => OP_TOLERANCE,
            Scope::Model => MODEL_TOLERANCE,
        }
    }
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scope::Op => "op",
            Scope::Block => "block",
            Scope::Model => "model",
        })
    }
}

/// One parameter class of one check.
#[derive(Debug, Clone)]
pub struct CheckRow {
    pub scope: Scope,
    pub row: Ablation,
    pub check: GradCheck,
}

impl CheckRow {
    pub fn passes(&self) -> bool {
        self.check.passes(self.scope.tolerance())
    }
}

#[derive(Debug, Clone)]
pub struct GradcheckOptions {
    pub seed: u64,
    pub step: f64,
    pub rows: Vec<Ablation>,
    pub scopes: Vec<Scope>,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            step: dcnv3_core::gradcheck::DEFAULT_STEP,
            rows: Ablation::ALL.to_vec(),
            scopes: Scope::ALL.to_vec(),
        }
    }
}

/// A random operator instance.
#[derive(Debug, Clone)]
pub struct Instance {
    pub cfg: DcnConfig,
    pub x: Tensor4,
    pub field: SamplingField,
    pub w: DcnWeights,
}

/// Random input, weights and field; offsets have a random integer part in
/// [-2, 2] and a fractional part in (0.1, 0.4), away from bilinear kinks.
pub fn random_instance(cfg: DcnConfig, n: usize, h: usize, w: usize, rng: &mut SeededRng) -> Instance {
    let mut x = Tensor4::zeros((n, cfg.channels, h, w));
    fill_uniform(x.data_mut(), 1.0, rng);
    let (ho, wo) = cfg.out_dims(h, w);
    let mut field = SamplingField::zeros(&cfg, n, ho, wo);
    for v in field.offsets.data_mut() {
        *v = rng.random_range(-2i32..=2) as f64 + rng.random_range(0.1..0.4);
    }
    fill_uniform(field.mask_logits.data_mut(), 2.0, rng);
    let mut weights = DcnWeights::zeros(&cfg, true);
    let bound = 1.0 / (cfg.channels as f64).sqrt();
    match &mut weights.projection {
        Projection::Shared(p) => fill_uniform(&mut p.matrix, bound, rng),
        Projection::PerPoint { weights, .. } => weights.iter_mut().for_each(|p| fill_uniform(&mut p.matrix, bound, rng)),
    }
    let mut flat = weights.flatten();
    let n_matrix = flat.len() - cfg.channels;
    fill_uniform(&mut flat[n_matrix..], 0.1, rng);
    weights.assign_flat(&flat);
    Instance { cfg, x, field, w: weights }
}

fn random_tensor(shape: dcnv3_core::Shape4, rng: &mut SeededRng) -> Tensor4 {
    let mut t = Tensor4::zeros(shape);
    fill_uniform(t.data_mut(), 1.0, rng);
    t
}

/// Adds uniform noise of half-width `scale` to every parameter.
fn jitter<P: Parameters>(p: &mut P, scale: f64, rng: &mut SeededRng) {
    let mut v = p.flatten();
    let mut noise = vec![0.0; v.len()];
    fill_uniform(&mut noise, scale, rng);
    v.iter_mut().zip(&noise).for_each(|(a, b)| *a += b);
    p.assign_flat(&v);
}

/// Every input class of the operator on a `(2, 8, G=2, 7×7)` instance.
pub fn check_op(row: Ablation, seed: u64, step: f64) -> Result<Vec<GradCheck>> {
    let mut rng = seeded_rng(seed);
    let inst = random_instance(DcnConfig::new(8, 2).with_ablation(row), 2, 7, 7, &mut rng);
    let Instance { cfg, x, field, w } = &inst;
    let y = dcnv3_forward(x, field, w, cfg)?;
    let up = random_tensor(y.shape(), &mut rng);
    let g = dcnv3_backward(&up, x, field, w, cfg)?;
    let eval = |x: &Tensor4, f: &SamplingField, w: &DcnWeights| dcnv3_forward(x, f, w, cfg).unwrap().into_vec();
    let u = up.data();

    let mut v = x.data().to_vec();
    let input = check_all_vjp("input", &mut v, g.input.data(), step, u, &mut |v| {
        eval(&Tensor4::from_vec(x.shape(), v.to_vec()).unwrap(), field, w)
    });
    let mut v = field.offsets.data().to_vec();
    let offsets = check_all_vjp("offsets", &mut v, g.offsets.data(), step, u, &mut |v| {
        let mut f = field.clone();
        f.offsets.data_mut().copy_from_slice(v);
        eval(x, &f, w)
    });
    let mut v = field.mask_logits.data().to_vec();
    let logits = check_all_vjp("mask_logits", &mut v, g.mask_logits.data(), step, u, &mut |v| {
        let mut f = field.clone();
        f.mask_logits.data_mut().copy_from_slice(v);
        eval(x, &f, w)
    });
    let mut v = w.flatten();
    let proj = check_all_vjp("projection", &mut v, &g.weights.flatten(), step, u, &mut |v| {
        let mut w2 = w.clone();
        w2.assign_flat(v);
        eval(x, field, &w2)
    });
    Ok(vec![input, offsets, logits, proj])
}

/// Input and every parameter of a `(1, 16, G=4, 7×7)` block with a random predictor.
pub fn check_block(row: Ablation, seed: u64, step: f64) -> Result<Vec<GradCheck>> {
    let mut rng = seeded_rng(seed);
    let cfg = DcnConfig::new(16, 4).with_ablation(row);
    let mut p = BlockParams::init(cfg, 4, true, &mut rng)?;
    jitter(&mut p, 0.2, &mut rng);
    let x = random_tensor((1, 16, 7, 7).into(), &mut rng);
    let (y, cache) = basic_block_forward(&x, &p)?;
    let up = random_tensor(y.shape(), &mut rng);
    let (gx, gp) = basic_block_backward(&p, &cache, &up)?;

    let mut v = x.data().to_vec();
    let input = check_all_vjp("input", &mut v, gx.data(), step, up.data(), &mut |v| {
        basic_block(&Tensor4::from_vec(x.shape(), v.to_vec()).unwrap(), &p).unwrap().into_vec()
    });
    let mut v = p.flatten();
    let params = check_all_vjp("parameters", &mut v, &gp.flatten(), step, up.data(), &mut |v| {
        let mut q = p.clone();
        q.assign_flat(v);
        basic_block(&x, &q).unwrap().into_vec()
    });
    Ok(vec![input, params])
}

/// The tiny model: `C1 = C' = 16`, one block per stage, five classes.
pub fn tiny_model_config(row: Ablation, seed: u64) -> ModelConfig {
    let mut cfg = ModelConfig::new(StackConfig::new(16, 16, 1, 1));
    cfg.name = "tiny".into();
    cfg.ablation = row;
    cfg.num_classes = 5;
    cfg.seed = seed;
    cfg
}

/// [`MODEL_SAMPLES`] random parameters and input pixels of the tiny model on a 32×32 image.
pub fn check_model(row: Ablation, seed: u64, step: f64) -> Result<Vec<GradCheck>> {
    let mut model = Model::build(&tiny_model_config(row, seed))?;
    let mut rng = seeded_rng(seed ^ 0x6d6f_64656c);
    jitter(&mut model, 0.1, &mut rng);
    let x = random_tensor((1, 3, 32, 32).into(), &mut rng);
    let (y, tape) = model.forward_tape(&x, Depth::Logits)?;
    let up = random_tensor(y.shape(), &mut rng);
    let (gx, gm) = model.backward(&tape, &up)?;

    let mut v = model.flatten();
    let idx = sample(&mut rng, v.len(), MODEL_SAMPLES).into_vec();
    let params = check_indices_vjp("parameters", &mut v, &gm.flatten(), &idx, step, up.data(), &mut |v| {
        let mut m = model.clone();
        m.assign_flat(v);
        m.forward(&x).unwrap().into_vec()
    });
    let mut v = x.data().to_vec();
    let idx = sample(&mut rng, v.len(), MODEL_SAMPLES).into_vec();
    let input = check_indices_vjp("input", &mut v, gx.data(), &idx, step, up.data(), &mut |v| {
        model.forward(&Tensor4::from_vec(x.shape(), v.to_vec()).unwrap()).unwrap().into_vec()
    });
    Ok(vec![params, input])
}

/// Runs the selected scopes for every selected ablation row.
pub fn run_gradcheck(opts: &GradcheckOptions, mut report: impl FnMut(&CheckRow)) -> Result<Vec<CheckRow>> {
    let mut rows = Vec::new();
    for &scope in &opts.scopes {
        for (i, &row) in opts.rows.iter().enumerate() {
            let seed = opts.seed.wrapping_mul(31).wrapping_add(i as u64);
            let checks = match scope {
                Scope::Op => check_op(row, seed, opts.step)?,
                Scope::Block => check_block(row, seed, opts.step)?,
                Scope::Model => check_model(row, seed, opts.step)?,
            };
            for check in checks {
                let r = CheckRow { scope, row, check };
                report(&r);
                rows.push(r);
            }
        }
    }
    Ok(rows)
}

/// Which kernel pair the oracle compares.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleMode {
    /// Cycle through all four ablation rows.
    AllRows,
    Row(Ablation),
    /// `dcnv2_forward` against the naive loop.
    Dcnv2,
}

impl OracleMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "all" => Some(Self::AllRows),
            "dcnv2" => Some(Self::Dcnv2),
            other => Ablation::parse(other).map(Self::Row),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleReport {
    pub trials: usize,
    pub max_ulps: u64,
    pub worst_trial: usize,
    pub max_abs_diff: f64,
}

impl OracleReport {
    pub fn passes(&self) -> bool {
        self.max_ulps <= MAX_ULPS
    }
}

/// Random instances up to `(2, 8, 2 groups, 7×7)`, with strided, dilated and
/// 5×5 grids mixed in, through both kernels.
pub fn run_oracle(seed: u64, trials: usize, mode: OracleMode) -> Result<OracleReport> {
    let mut report = OracleReport { trials, max_ulps: 0, worst_trial: 0, max_abs_diff: 0.0 };
    for t in 0..trials {
        let mut rng = seeded_rng(seed.wrapping_mul(0x9e37_79b9).wrapping_add(t as u64));
        let n = rng.random_range(1..=2);
        let (h, w) = (rng.random_range(3..=7), rng.random_range(3..=7));
        let mut cfg = match mode {
            OracleMode::Dcnv2 => DcnConfig::dcnv2(rng.random_range(1..=8)),
            OracleMode::Row(row) => random_grouped(&mut rng).with_ablation(row),
            OracleMode::AllRows => random_grouped(&mut rng).with_ablation(Ablation::ALL[t % 4]),
        };
        match t % 5 {
            1 => cfg.stride = 2,
            2 => (cfg.dilation, cfg.pad) = (2, 2),
            3 => cfg = cfg.with_kernel(5),
            _ => {}
        }
        let mut inst = random_instance(cfg, n, h, w, &mut rng);
        // Oracle inputs need not avoid kinks; spread offsets further.
        fill_uniform(inst.field.offsets.data_mut(), 3.0, &mut rng);
        let fast = match mode {
            OracleMode::Dcnv2 => dcnv2_forward(&inst.x, &inst.field, &inst.w, &cfg)?,
            _ => dcnv3_forward(&inst.x, &inst.field, &inst.w, &cfg)?,
        };
        let slow = dcnv3_naive_forward(&inst.x, &inst.field, &inst.w, &cfg)?;
        let ulps = max_ulp_distance(fast.data(), slow.data());
        report.max_abs_diff = report.max_abs_diff.max(fast.max_abs_diff(&slow)?);
        if ulps > report.max_ulps {
            report.max_ulps = ulps;
            report.worst_trial = t;
        }
    }
    Ok(report)
}

fn random_grouped(rng: &mut SeededRng) -> DcnConfig {
    let g = rng.random_range(1..=2);
    DcnConfig::new(g * rng.random_range(1..=4), g)
}
