//! Stacking rules, the variant registry, model assembly and the full forward/backward pass.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::block::{basic_block_backward, basic_block_forward, BlockCache, BlockParams};
use crate::dcn::{Ablation, DcnConfig};
use crate::layers::{
    downsample_backward, downsample_forward, head, head_backward, stem_backward, stem_forward, Downsample,
    DownsampleCache, Head, Stem, StemCache,
};
use crate::params::{join, seeded_rng, Parameters};
use crate::{Error, Result, Tensor4};

pub const STAGES: usize = 4;

/// The four free hyperparameters `(C1, C', L1, L3)` plus the stored per-stage depths.
///
/// Depths are kept for all four stages so configs read from disk can violate
/// the "AABA" rule and be reported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StackConfig {
    pub c1: usize,
    /// Group dimension `C'`.
    pub cprime: usize,
    pub depths: [usize; STAGES],
}

impl StackConfig {
    /// "AABA" stack: `L2 = L4 = L1`.
    pub const fn new(c1: usize, cprime: usize, l1: usize, l3: usize) -> Self {
        Self { c1, cprime, depths: [l1, l1, l3, l1] }
    }

    /// `C_i = 2^(i−1)·C1`, `i` zero-based here.
    pub fn channels(&self, stage: usize) -> usize {
        self.c1 << stage
    }

    /// `G_i = C_i / C'`.
    pub fn groups(&self, stage: usize) -> usize {
        self.channels(stage) / self.cprime
    }

    pub fn l1(&self) -> usize {
        self.depths[0]
    }

    pub fn l3(&self) -> usize {
        self.depths[2]
    }

    /// Scaling depth `D = 3·L1 + L3`.
    pub fn depth(&self) -> usize {
        3 * self.l1() + self.l3()
    }
}

impl fmt::Display for StackConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [a, b, c, d] = self.depths;
        write!(f, "(C1={}, C'={}, L=[{a},{b},{c},{d}])", self.c1, self.cprime)
    }
}

/// A violated stacking rule.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StackViolation {
    ZeroDimension,
    /// `C1` is not a multiple of `C'`, so `G1` is fractional.
    GroupDivisibility { c1: usize, cprime: usize },
    /// The stem halves `C1` for its first convolution.
    OddWidth { c1: usize },
    /// `L1 = L2 = L4` violated.
    UnequalOuterStages { depths: [usize; STAGES] },
    /// `L1 ≤ L3` violated.
    ShallowThirdStage { l1: usize, l3: usize },
}

impl fmt::Display for StackViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StackViolation::ZeroDimension => write!(f, "C1, C' and every L_i must be positive"),
            StackViolation::GroupDivisibility { c1, cprime } => {
                write!(f, "C1 not divisible by C' (G1 = {c1}/{cprime})")
            }
            StackViolation::OddWidth { c1 } => write!(f, "C1 = {c1} must be even for the stem"),
            StackViolation::UnequalOuterStages { depths } => {
                write!(f, "L1 = L2 = L4 violated ({}, {}, {})", depths[0], depths[1], depths[3])
            }
            StackViolation::ShallowThirdStage { l1, l3 } => write!(f, "L1 ≤ L3 violated ({l1} > {l3})"),
        }
    }
}

/// Every stacking rule `cfg` breaks; empty means valid.
pub fn stack_violations(cfg: &StackConfig) -> Vec<StackViolation> {
    let mut v = Vec::new();
    if cfg.c1 == 0 || cfg.cprime == 0 || cfg.depths.contains(&0) {
        v.push(StackViolation::ZeroDimension);
    }
    if cfg.cprime != 0 && cfg.c1 % cfg.cprime != 0 {
        v.push(StackViolation::GroupDivisibility { c1: cfg.c1, cprime: cfg.cprime });
    }
    if cfg.c1 % 2 != 0 {
        v.push(StackViolation::OddWidth { c1: cfg.c1 });
    }
    let [l1, l2, l3, l4] = cfg.depths;
    if l1 != l2 || l1 != l4 {
        v.push(StackViolation::UnequalOuterStages { depths: cfg.depths });
    }
    if l1 > l3 {
        v.push(StackViolation::ShallowThirdStage { l1, l3 });
    }
    v
}

pub fn validate_stack(cfg: &StackConfig) -> core::result::Result<(), Vec<StackViolation>> {
    let v = stack_violations(cfg);
    if v.is_empty() {
        Ok(())
    } else {
        Err(v)
    }
}

fn stack_error(cfg: &StackConfig, violations: &[StackViolation]) -> Error {
    let mut msg = alloc::format!("invalid stack {cfg}:");
    for v in violations {
        msg.push_str(&alloc::format!(" {v};"));
    }
    Error::Config(msg)
}

/// A named entry of the model family.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VariantSpec {
    pub name: &'static str,
    pub stack: StackConfig,
    /// Reported parameter count.
    pub expected_params: u64,
    pub layer_scale: bool,
}

impl VariantSpec {
    /// ImageNet-1K classification model of this variant.
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            name: String::from(self.name),
            stack: self.stack,
            layer_scale: self.layer_scale,
            ..ModelConfig::new(self.stack)
        }
    }
}

const fn depths(l: [usize; 4]) -> [usize; 4] {
    l
}

/// The six published variants, smallest first.
pub const VARIANTS: [VariantSpec; 6] = [
    VariantSpec {
        name: "T",
        stack: StackConfig { c1: 64, cprime: 16, depths: depths([4, 4, 18, 4]) },
        expected_params: 30_000_000,
        layer_scale: false,
    },
    VariantSpec {
        name: "S",
        stack: StackConfig { c1: 80, cprime: 16, depths: depths([4, 4, 21, 4]) },
        expected_params: 50_000_000,
        layer_scale: true,
    },
    VariantSpec {
        name: "B",
        stack: StackConfig { c1: 112, cprime: 16, depths: depths([4, 4, 21, 4]) },
        expected_params: 97_000_000,
        layer_scale: true,
    },
    VariantSpec {
        name: "L",
        stack: StackConfig { c1: 160, cprime: 16, depths: depths([5, 5, 22, 5]) },
        expected_params: 223_000_000,
        layer_scale: true,
    },
    VariantSpec {
        name: "XL",
        stack: StackConfig { c1: 192, cprime: 16, depths: depths([5, 5, 24, 5]) },
        expected_params: 335_000_000,
        layer_scale: true,
    },
    VariantSpec {
        name: "H",
        stack: StackConfig { c1: 320, cprime: 32, depths: depths([6, 6, 32, 6]) },
        expected_params: 1_080_000_000,
        layer_scale: true,
    },
];

pub fn variant_registry() -> &'static [VariantSpec] {
    &VARIANTS
}

/// Looks a variant up by name, accepting `T` or `InternImage-T` in any case.
pub fn variant(name: &str) -> Option<&'static VariantSpec> {
    let short = name.rsplit('-').next().unwrap_or(name);
    VARIANTS.iter().find(|v| v.name.eq_ignore_ascii_case(short))
}

/// Everything needed to build a model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub name: String,
    pub stack: StackConfig,
    pub ffn_ratio: usize,
    pub layer_scale: bool,
    pub num_classes: usize,
    pub seed: u64,
    /// DCN sampling-grid side.
    pub kernel: usize,
    pub ablation: Ablation,
    pub in_channels: usize,
}

impl ModelConfig {
    /// RGB input, FFN ratio 4, 1000 classes, 3×3 DCNv3, layer scale off.
    pub fn new(stack: StackConfig) -> Self {
        Self {
            name: String::from("custom"),
            stack,
            ffn_ratio: 4,
            layer_scale: false,
            num_classes: 1000,
            seed: 0,
            kernel: 3,
            ablation: Ablation::Dcnv3,
            in_channels: 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        validate_stack(&self.stack).map_err(|v| stack_error(&self.stack, &v))?;
        if self.ffn_ratio == 0 || self.num_classes == 0 || self.in_channels == 0 {
            return Err(Error::Config("ffn_ratio, num_classes and input channels must be positive".into()));
        }
        if self.kernel % 2 == 0 {
            return Err(Error::Config(alloc::format!("kernel side {} must be odd", self.kernel)));
        }
        Ok(())
    }

    pub fn dcn_config(&self, stage: usize) -> DcnConfig {
        DcnConfig::new(self.stack.channels(stage), self.stack.groups(stage))
            .with_kernel(self.kernel)
            .with_ablation(self.ablation)
    }
}

/// Parameter counts by component.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamReport {
    pub stem: u64,
    /// Blocks of each stage.
    pub stages: [u64; STAGES],
    pub downsamplers: [u64; STAGES - 1],
    pub head: u64,
    pub closed_form_total: u64,
    /// Sum over the tensors of an assembled model, when enumerated.
    pub enumerated_total: Option<u64>,
}

/// Closed-form parameter count of one basic block.
pub fn block_param_count(dcn: &DcnConfig, ffn_ratio: usize, layer_scale: bool) -> u64 {
    let c = dcn.channels as u64;
    let k = dcn.points() as u64;
    let g = dcn.effective_groups() as u64;
    let r = ffn_ratio as u64;
    let projection = if dcn.shared_weights { c * c } else { k * c * c } + c;
    let predictor = (9 * c + c) + (c * 3 * k * g + 3 * k * g);
    let norms = 4 * c;
    let ffn = (r * c * c + r * c) + (r * c * c + c);
    let scale = if layer_scale { 2 * c } else { 0 };
    projection + predictor + norms + ffn + scale
}

/// Closed-form counts for every component of the model described by `cfg`.
pub fn count_params(cfg: &ModelConfig) -> Result<ParamReport> {
    cfg.validate()?;
    let s = &cfg.stack;
    let c1 = s.c1 as u64;
    let half = c1 / 2;
    let cin = cfg.in_channels as u64;
    let stem = (cin * half * 9 + half) + 2 * half + (half * c1 * 9 + c1) + 2 * c1;
    let mut stages = [0; STAGES];
    for (i, total) in stages.iter_mut().enumerate() {
        *total = s.depths[i] as u64 * block_param_count(&cfg.dcn_config(i), cfg.ffn_ratio, cfg.layer_scale);
    }
    let mut downsamplers = [0; STAGES - 1];
    for (i, d) in downsamplers.iter_mut().enumerate() {
        let (a, b) = (s.channels(i) as u64, s.channels(i + 1) as u64);
        *d = 9 * a * b + b + 2 * b;
    }
    let head = s.channels(STAGES - 1) as u64 * cfg.num_classes as u64 + cfg.num_classes as u64;
    let closed_form_total = stem + stages.iter().sum::<u64>() + downsamplers.iter().sum::<u64>() + head;
    Ok(ParamReport { stem, stages, downsamplers, head, closed_form_total, enumerated_total: None })
}

/// Assembles every component with zero weights one at a time and sums tensor sizes.
///
/// Only one block is alive at a time, so even the largest variants can be
/// enumerated.
pub fn enumerate_param_count(cfg: &ModelConfig) -> Result<u64> {
    cfg.validate()?;
    let s = &cfg.stack;
    let mut total = Stem::zeros(cfg.in_channels, s.c1)?.num_params() as u64;
    for i in 0..STAGES {
        for _ in 0..s.depths[i] {
            total += BlockParams::zeros(cfg.dcn_config(i), cfg.ffn_ratio, cfg.layer_scale)?.num_params() as u64;
        }
        if i + 1 < STAGES {
            total += Downsample::zeros(s.channels(i), s.channels(i + 1))?.num_params() as u64;
        }
    }
    total += Head::zeros(s.channels(STAGES - 1), cfg.num_classes).num_params() as u64;
    Ok(total)
}

/// [`count_params`] with the enumerated total filled in.
pub fn audit_params(cfg: &ModelConfig) -> Result<ParamReport> {
    let mut report = count_params(cfg)?;
    report.enumerated_total = Some(enumerate_param_count(cfg)?);
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage {
    pub blocks: Vec<BlockParams>,
    /// Transition to the next stage; absent after the last one.
    pub downsample: Option<Downsample>,
}

/// Stem, four stages and a classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub stem: Stem,
    pub stages: Vec<Stage>,
    pub head: Head,
}

/// Where a forward pass stops.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Depth {
    /// Output of the stem.
    Stem,
    /// Output of the blocks of stage `i` (1-based), before its downsampling.
    Stage(usize),
    /// Classifier logits.
    Logits,
}

/// Cached activations of a forward pass, consumed by [`Model::backward`].
#[derive(Debug, Clone)]
pub struct Tape {
    depth: Depth,
    stem: StemCache,
    blocks: Vec<Vec<BlockCache>>,
    downsamples: Vec<DownsampleCache>,
    head_input: Option<Tensor4>,
    stage_outputs: Vec<Tensor4>,
}

impl Tape {
    /// Output of each completed stage's blocks.
    pub fn stage_outputs(&self) -> &[Tensor4] {
        &self.stage_outputs
    }

    pub fn block_caches(&self) -> &[Vec<BlockCache>] {
        &self.blocks
    }
}

/// Output of [`Model::forward_features`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelOutput {
    /// `(n, num_classes, 1, 1)`.
    pub logits: Tensor4,
    /// Output of each stage's blocks.
    pub features: Vec<Tensor4>,
}

pub fn build_model(cfg: &ModelConfig) -> Result<Model> {
    Model::build(cfg)
}

impl Model {
    /// Deterministic initialization from `cfg.seed`: fan-in uniform
    /// projections and convolutions, zero predictors and biases, unit LN.
    pub fn build(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = seeded_rng(cfg.seed);
        let s = &cfg.stack;
        let stem = Stem::init(cfg.in_channels, s.c1, &mut rng)?;
        let mut stages = Vec::with_capacity(STAGES);
        for i in 0..STAGES {
            let blocks = (0..s.depths[i])
                .map(|_| BlockParams::init(cfg.dcn_config(i), cfg.ffn_ratio, cfg.layer_scale, &mut rng))
                .collect::<Result<Vec<_>>>()?;
            let downsample = if i + 1 < STAGES {
                Some(Downsample::init(s.channels(i), s.channels(i + 1), &mut rng)?)
            } else {
                None
            };
            stages.push(Stage { blocks, downsample });
        }
        let head = Head::init(s.channels(STAGES - 1), cfg.num_classes, &mut rng);
        Ok(Self { config: cfg.clone(), stem, stages, head })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            config: self.config.clone(),
            stem: self.stem.zeros_like(),
            stages: self
                .stages
                .iter()
                .map(|st| Stage {
                    blocks: st.blocks.iter().map(BlockParams::zeros_like).collect(),
                    downsample: st.downsample.as_ref().map(Downsample::zeros_like),
                })
                .collect(),
            head: self.head.zeros_like(),
        }
    }

    fn check_input(&self, x: &Tensor4) -> Result<()> {
        let s = x.shape();
        if s.c != self.config.in_channels {
            return Err(Error::shape("model input channels", self.config.in_channels, s.c));
        }
        if s.h < 32 || s.w < 32 || s.h % 32 != 0 || s.w % 32 != 0 {
            return Err(Error::Input(alloc::format!(
                "model input {}×{} must be at least 32 and divisible by 32",
                s.h,
                s.w
            )));
        }
        Ok(())
    }

    /// Logits `(n, num_classes, 1, 1)`.
    pub fn forward(&self, x: &Tensor4) -> Result<Tensor4> {
        self.forward_features(x).map(|o| o.logits)
    }

    pub fn forward_features(&self, x: &Tensor4) -> Result<ModelOutput> {
        let (logits, tape) = self.forward_tape(x, Depth::Logits)?;
        Ok(ModelOutput { logits, features: tape.stage_outputs })
    }

    /// Forward pass up to `depth`, retaining what [`Model::backward`] needs.
    pub fn forward_tape(&self, x: &Tensor4, depth: Depth) -> Result<(Tensor4, Tape)> {
        self.check_input(x)?;
        if let Depth::Stage(i) = depth {
            if i == 0 || i > STAGES {
                return Err(Error::Config(alloc::format!("stage {i} out of range 1..={STAGES}")));
            }
        }
        let (mut h, stem_cache) = stem_forward(x, &self.stem)?;
        let mut tape = Tape {
            depth,
            stem: stem_cache,
            blocks: Vec::new(),
            downsamples: Vec::new(),
            head_input: None,
            stage_outputs: Vec::new(),
        };
        if depth == Depth::Stem {
            return Ok((h, tape));
        }
        let last = match depth {
            Depth::Stage(i) => i,
            _ => STAGES,
        };
        for (i, stage) in self.stages.iter().enumerate().take(last) {
            let mut caches = Vec::with_capacity(stage.blocks.len());
            for b in &stage.blocks {
                let (out, cache) = basic_block_forward(&h, b)?;
                caches.push(cache);
                h = out;
            }
            tape.blocks.push(caches);
            tape.stage_outputs.push(h.clone());
            if i + 1 == last && depth != Depth::Logits {
                return Ok((h, tape));
            }
            if let Some(d) = &stage.downsample {
                let (out, cache) = downsample_forward(&h, d)?;
                tape.downsamples.push(cache);
                h = out;
            }
        }
        let logits = head(&h, &self.head)?;
        tape.head_input = Some(h);
        Ok((logits, tape))
    }

    /// Pullback of [`Model::forward_tape`]: input gradient and a model-shaped gradient.
    pub fn backward(&self, tape: &Tape, grad_out: &Tensor4) -> Result<(Tensor4, Model)> {
        let mut grads = self.zeros_like();
        let mut g = grad_out.clone();
        if tape.depth == Depth::Logits {
            let h = tape.head_input.as_ref().ok_or_else(|| Error::Input("tape has no head input".into()))?;
            let (gh, g_head) = head_backward(h, &self.head, &g)?;
            grads.head = g_head;
            g = gh;
        }
        for i in (0..tape.blocks.len()).rev() {
            let stage = &self.stages[i];
            if i < tape.downsamples.len() {
                let d = stage.downsample.as_ref().expect("tape recorded a downsample");
                let (gd, g_down) = downsample_backward(d, &tape.downsamples[i], &g)?;
                grads.stages[i].downsample = Some(g_down);
                g = gd;
            }
            for (j, cache) in tape.blocks[i].iter().enumerate().rev() {
                let (gb, g_block) = basic_block_backward(&stage.blocks[j], cache, &g)?;
                grads.stages[i].blocks[j] = g_block;
                g = gb;
            }
        }
        let (gx, g_stem) = stem_backward(&self.stem, &tape.stem, &g)?;
        grads.stem = g_stem;
        Ok((gx, grads))
    }
}

impl Parameters for Model {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        self.stem.visit(&join(prefix, "stem"), f);
        for (i, st) in self.stages.iter().enumerate() {
            for (j, b) in st.blocks.iter().enumerate() {
                b.visit(&join(prefix, &alloc::format!("stages.{i}.blocks.{j}")), f);
            }
            if let Some(d) = &st.downsample {
                d.visit(&join(prefix, &alloc::format!("stages.{i}.downsample")), f);
            }
        }
        self.head.visit(&join(prefix, "head"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        self.stem.visit_mut(&join(prefix, "stem"), f);
        for (i, st) in self.stages.iter_mut().enumerate() {
            for (j, b) in st.blocks.iter_mut().enumerate() {
                b.visit_mut(&join(prefix, &alloc::format!("stages.{i}.blocks.{j}")), f);
            }
            if let Some(d) = &mut st.downsample {
                d.visit_mut(&join(prefix, &alloc::format!("stages.{i}.downsample")), f);
            }
        }
        self.head.visit_mut(&join(prefix, "head"), f);
    }
}
