//! Compound depth/width scaling and the stacking search space.
//!
//! Depth `D = 3·L1 + L3` and width `C1` grow as `D' = α^φ·D`, `C1' = β^φ·C1`
//! under `α·β^1.99 ≈ 2`. The exponent 1.99 comes from doubling the model
//! width at constant depth: that roughly doubles the parameter count of this
//! family, so one unit of `φ` doubles the model.

use alloc::vec::Vec;

use crate::model::{count_params, stack_violations, ModelConfig, StackConfig, StackViolation};
use crate::{Error, Result};

/// Width exponent in the scaling constraint.
pub const WIDTH_EXPONENT: f64 = 1.99;
/// Largest accepted `|α·β^1.99 − 2|` in strict mode.
pub const CONSTRAINT_TOLERANCE: f64 = 0.05;

/// `α·β^1.99 − 2`.
pub fn check_constraint(alpha: f64, beta: f64) -> f64 {
    alpha * libm::pow(beta, WIDTH_EXPONENT) - 2.0
}

/// Scaling factors `(α, β, φ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleFactors {
    pub alpha: f64,
    pub beta: f64,
    pub phi: f64,
}

impl ScaleFactors {
    /// Best-performing pair from the scaling-factor sweep.
    pub const BEST_ALPHA: f64 = 1.09;
    pub const BEST_BETA: f64 = 1.36;

    /// The five `(α, β)` pairs of the scaling-factor sweep.
    pub const SWEEP: [(f64, f64); 5] = [(1.03, 1.40), (1.06, 1.38), (1.09, 1.36), (1.12, 1.34), (1.15, 1.32)];

    pub fn new(alpha: f64, beta: f64, phi: f64) -> Result<Self> {
        if !(alpha >= 1.0 && beta >= 1.0) || !phi.is_finite() || !alpha.is_finite() || !beta.is_finite() {
            return Err(Error::Config(alloc::format!(
                "scaling factors need α ≥ 1, β ≥ 1 and finite φ (got α={alpha}, β={beta}, φ={phi})"
            )));
        }
        Ok(Self { alpha, beta, phi })
    }

    pub fn best(phi: f64) -> Self {
        Self { alpha: Self::BEST_ALPHA, beta: Self::BEST_BETA, phi }
    }

    pub fn residual(&self) -> f64 {
        check_constraint(self.alpha, self.beta)
    }

    pub fn depth_multiplier(&self) -> f64 {
        libm::pow(self.alpha, self.phi)
    }

    pub fn width_multiplier(&self) -> f64 {
        libm::pow(self.beta, self.phi)
    }
}

/// A scaled stack: continuous targets, the snapped config, and the snapping error.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaledConfig {
    pub origin: StackConfig,
    pub factors: ScaleFactors,
    pub depth_cont: f64,
    pub width_cont: f64,
    pub stack: StackConfig,
    /// `snapped − continuous` depth.
    pub depth_delta: f64,
    /// `snapped − continuous` width.
    pub width_delta: f64,
}

impl ScaledConfig {
    /// Applies a further `φ` on top of this one, from the same origin.
    pub fn rescale(&self, extra_phi: f64, strict: bool) -> Result<Self> {
        let f = ScaleFactors { phi: self.factors.phi + extra_phi, ..self.factors };
        scale_config(&self.origin, &f, strict)
    }
}

/// Scales `origin` by `f` and snaps the result onto a valid stack.
///
/// Width snaps to the nearest multiple of `C'` (ties upward). Depth snaps to
/// the nearest achievable `3·L1 + L3`; among the `(L1, L3)` splits of that depth
/// the one with `L1` closest to `α^φ·L1` wins, ties to the smaller `L1`.
pub fn scale_config(origin: &StackConfig, f: &ScaleFactors, strict: bool) -> Result<ScaledConfig> {
    let v = stack_violations(origin);
    if !v.is_empty() {
        return Err(Error::Config(alloc::format!("origin stack {origin} is invalid: {}", v[0])));
    }
    let f = ScaleFactors::new(f.alpha, f.beta, f.phi)?;
    let residual = f.residual();
    if strict && residual.abs() > CONSTRAINT_TOLERANCE {
        return Err(Error::Config(alloc::format!(
            "scaling constraint violated: α·β^{WIDTH_EXPONENT} − 2 = {residual:.6} exceeds ±{CONSTRAINT_TOLERANCE}"
        )));
    }
    let depth_cont = f.depth_multiplier() * origin.depth() as f64;
    let width_cont = f.width_multiplier() * origin.c1 as f64;
    let l1_cont = f.depth_multiplier() * origin.l1() as f64;

    let c1 = snap_width(width_cont, origin.cprime);
    let (l1, l3) = snap_depth(depth_cont, l1_cont);
    let stack = StackConfig::new(c1, origin.cprime, l1, l3);
    debug_assert!(stack_violations(&stack).is_empty(), "{stack}");
    Ok(ScaledConfig {
        origin: *origin,
        factors: f,
        depth_cont,
        width_cont,
        stack,
        depth_delta: stack.depth() as f64 - depth_cont,
        width_delta: c1 as f64 - width_cont,
    })
}

/// Nearest positive even multiple of `cprime`, ties upward.
fn snap_width(width: f64, cprime: usize) -> usize {
    let q = width / cprime as f64;
    let lower = (libm::floor(q) as usize).max(1);
    let candidates = [lower, lower + 1];
    let mut best = candidates[1] * cprime;
    let mut best_err = f64::INFINITY;
    for m in candidates.iter().rev() {
        let c = m * cprime;
        let err = (c as f64 - width).abs();
        if err < best_err && c % 2 == 0 {
            best = c;
            best_err = err;
        }
    }
    best
}

/// `(L1, L3)` with `L1 ≤ L3` minimizing the depth error, then `|L1 − l1_target|`.
fn snap_depth(depth: f64, l1_target: f64) -> (usize, usize) {
    // D ≥ 4 because L1 ≥ 1 and L3 ≥ L1.
    let d = if depth <= 4.0 {
        4
    } else {
        let lower = libm::floor(depth) as usize;
        if (lower + 1) as f64 - depth <= depth - lower as f64 {
            lower + 1
        } else {
            lower
        }
    };
    let mut best = (1, d - 3);
    let mut best_err = f64::INFINITY;
    for l1 in 1..=d / 4 {
        let err = (l1 as f64 - l1_target).abs();
        if err < best_err {
            best = (l1, d - 3 * l1);
            best_err = err;
        }
    }
    best
}

/// Discretized search-space axes.
pub const SEARCH_C1: [usize; 3] = [48, 64, 80];
pub const SEARCH_L1: [usize; 5] = [1, 2, 3, 4, 5];
pub const SEARCH_CPRIME: [usize; 2] = [16, 32];
/// Parameter budget of the origin model and its relative tolerance.
pub const SEARCH_BUDGET: u64 = 30_000_000;
pub const SEARCH_BUDGET_TOLERANCE: f64 = 0.05;
const MAX_L3: usize = 256;

/// One point of the stacking search space.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchEntry {
    pub stack: StackConfig,
    /// Closed-form count; `None` when the stack breaks a rule and cannot be built.
    pub params: Option<u64>,
    pub violations: Vec<StackViolation>,
}

impl SearchEntry {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    /// Relative deviation from [`SEARCH_BUDGET`].
    pub fn budget_deviation(&self) -> Option<f64> {
        self.params.map(|p| (p as f64 - SEARCH_BUDGET as f64) / SEARCH_BUDGET as f64)
    }
}

/// All `3 × 5 × 2` combinations of `(C1, L1, C')`, each with the deepest
/// `L3 ≥ L1` whose model stays within the budget plus tolerance.
///
/// Models use the origin recipe: FFN ratio 4, no layer scale, 1000 classes.
pub fn enumerate_search_space() -> Vec<SearchEntry> {
    let limit = SEARCH_BUDGET as f64 * (1.0 + SEARCH_BUDGET_TOLERANCE);
    let mut out = Vec::with_capacity(SEARCH_C1.len() * SEARCH_L1.len() * SEARCH_CPRIME.len());
    for &c1 in &SEARCH_C1 {
        for &l1 in &SEARCH_L1 {
            for &cprime in &SEARCH_CPRIME {
                let mut stack = StackConfig::new(c1, cprime, l1, l1);
                let violations = stack_violations(&stack);
                if !violations.is_empty() {
                    out.push(SearchEntry { stack, params: None, violations });
                    continue;
                }
                let count = |s: StackConfig| count_params(&ModelConfig::new(s)).map(|r| r.closed_form_total).ok();
                let mut params = count(stack);
                while stack.l3() < MAX_L3 {
                    let deeper = StackConfig::new(c1, cprime, l1, stack.l3() + 1);
                    match count(deeper) {
                        Some(p) if p as f64 <= limit => {
                            stack = deeper;
                            params = Some(p);
                        }
                        _ => break,
                    }
                }
                out.push(SearchEntry { stack, params, violations: Vec::new() });
            }
        }
    }
    out
}
