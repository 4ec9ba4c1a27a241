//! One PASS/FAIL line per acceptance criterion. Exits non-zero if any fails.

use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use dcnv3_core::dcn::{dcnv3_forward, modulation_scalars, Ablation, DcnConfig, DcnWeights, SamplingField};
use dcnv3_core::erf::{erf_map, static_receptive_field, synthetic_image};
use dcnv3_core::model::{
    build_model, count_params, enumerate_param_count, variant, variant_registry, Depth, ModelConfig, StackConfig,
};
use dcnv3_core::ops::{conv2d, Conv2dWeights};
use dcnv3_core::params::{seeded_rng, Parameters};
use dcnv3_core::scaling::{check_constraint, enumerate_search_space, scale_config, ScaleFactors, SEARCH_BUDGET};
use dcnv3_core::Tensor4;
use internimage::suite::{run_gradcheck, run_oracle, GradcheckOptions, OracleMode, Scope, MAX_ULPS};
use internimage::{config_file, report, weights};
use rand::Rng;

const GRAD_STEP: f64 = 1e-6;
const OP_BLOCK_TOL: f64 = 1e-5;
const MODEL_TOL: f64 = 1e-4;
const GRAD_BUDGET: Duration = Duration::from_secs(120);
const ORACLE_TRIALS: usize = 100;
const ORACLE_BUDGET: Duration = Duration::from_secs(60);
const SUM_TOL: f64 = 1e-12;
const EXACT: f64 = 1e-12;
const PARAM_TOL: f64 = 0.15;
const TARGETS: [(&str, f64); 6] = [("T", 30e6), ("S", 50e6), ("B", 97e6), ("L", 223e6), ("XL", 335e6), ("H", 1.08e9)];
const RESIDUAL_TOL: f64 = 0.05;
const SEARCH_SIZE: usize = 30;
const SEARCH_TOL: f64 = 0.05;
const TRAIN_STEPS: usize = 200;
const TRAIN_BUDGET: Duration = Duration::from_secs(300);

struct Outcome {
    pass: bool,
    detail: String,
}

type Criterion = (&'static str, fn() -> Outcome);

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn gradients() -> Outcome {
    let start = Instant::now();
    let opts = GradcheckOptions { step: GRAD_STEP, ..GradcheckOptions::default() };
    let rows = match run_gradcheck(&opts, |_| {}) {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("error: {e}")),
    };
    let elapsed = start.elapsed();
    let mut worst = [0.0f64; 3];
    let mut failures = Vec::new();
    for r in &rows {
        let (slot, tol) = match r.scope {
            Scope::Op => (0, OP_BLOCK_TOL),
            Scope::Block => (1, OP_BLOCK_TOL),
            Scope::Model => (2, MODEL_TOL),
        };
        worst[slot] = worst[slot].max(r.check.max_rel_error);
        if r.check.max_rel_error > tol {
            failures.push(format!("{} {} {}", r.scope, r.row.name(), r.check.name));
        }
    }
    let rows_seen: std::collections::BTreeSet<_> = rows.iter().map(|r| r.row.name()).collect();
    let pass = failures.is_empty() && rows_seen.len() == 4 && elapsed <= GRAD_BUDGET;
    outcome(
        pass,
        format!(
            "{} checks over {} rows, max rel err op {:.2e} block {:.2e} (≤{OP_BLOCK_TOL:e}) model {:.2e} (≤{MODEL_TOL:e}), {:.1}s (≤{}s){}",
            rows.len(),
            rows_seen.len(),
            worst[0],
            worst[1],
            worst[2],
            elapsed.as_secs_f64(),
            GRAD_BUDGET.as_secs(),
            if failures.is_empty() { String::new() } else { format!(", failing: {}", failures.join("; ")) }
        ),
    )
}

fn oracle() -> Outcome {
    let start = Instant::now();
    match run_oracle(0, ORACLE_TRIALS, OracleMode::AllRows) {
        Ok(r) => {
            let elapsed = start.elapsed();
            outcome(
                r.passes() && r.trials == ORACLE_TRIALS && elapsed <= ORACLE_BUDGET,
                format!(
                    "{} instances, max {} ulps (≤{MAX_ULPS}), max |Δ| {:.1e}, {:.2}s (≤{}s)",
                    r.trials,
                    r.max_ulps,
                    r.max_abs_diff,
                    elapsed.as_secs_f64(),
                    ORACLE_BUDGET.as_secs()
                ),
            )
        }
        Err(e) => outcome(false, format!("error: {e}")),
    }
}

fn random_tensor(shape: (usize, usize, usize, usize), scale: f64, rng: &mut impl Rng) -> Tensor4 {
    Tensor4::from_fn(shape, |_, _, _, _| rng.random_range(-scale..scale))
}

fn random_field(cfg: &DcnConfig, n: usize, h: usize, w: usize, spread: f64, logit: f64, seed: u64) -> SamplingField {
    let mut rng = seeded_rng(seed);
    let (ho, wo) = cfg.out_dims(h, w);
    SamplingField {
        offsets: random_tensor((n, cfg.offset_channels(), ho, wo), spread, &mut rng),
        mask_logits: random_tensor((n, cfg.mask_channels(), ho, wo), logit, &mut rng),
    }
}

fn normalization() -> Outcome {
    let mut softmax_err: f64 = 0.0;
    let mut out_of_range = 0usize;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    let mut k = 0;
    for (seed, row) in Ablation::ALL.into_iter().enumerate() {
        for logit in [1.0, 10.0, 40.0] {
            let cfg = DcnConfig::new(16, 4).with_ablation(row);
            k = cfg.points();
            let field = random_field(&cfg, 2, 7, 7, 1.0, logit, seed as u64);
            let m = modulation_scalars(&field, &cfg);
            for n in 0..2 {
                for g in 0..cfg.effective_groups() {
                    for site in 0..m.shape().plane() {
                        let vals: Vec<f64> =
                            (0..k).map(|p| m.plane(n, SamplingField::mask_channel(&cfg, g, p))[site]).collect();
                        out_of_range += vals.iter().filter(|v| !(0.0..=1.0).contains(*v)).count();
                        let sum: f64 = vals.iter().sum();
                        if row == Ablation::SigmoidModulation {
                            (lo, hi) = (lo.min(sum), hi.max(sum));
                        } else {
                            softmax_err = softmax_err.max((sum - 1.0).abs());
                        }
                    }
                }
            }
        }
    }
    outcome(
        softmax_err <= SUM_TOL && out_of_range == 0,
        format!(
            "softmax |Σm − 1| ≤ {softmax_err:.1e} (≤{SUM_TOL:e}); every scalar in [0,1]; sigmoid sums span [{lo:.3}, {hi:.3}] of [0, {k}]"
        ),
    )
}

fn interior_diff(a: &Tensor4, b: &Tensor4, margin: usize) -> f64 {
    let s = a.shape();
    let mut worst: f64 = 0.0;
    for n in 0..s.n {
        for c in 0..s.c {
            for y in margin..s.h - margin {
                for x in margin..s.w - margin {
                    worst = worst.max((a.at(n, c, y, x) - b.at(n, c, y, x)).abs());
                }
            }
        }
    }
    worst
}

fn degenerate() -> Outcome {
    let mut worst: f64 = 0.0;
    for (c, g) in [(4, 1), (8, 2), (16, 4), (16, 16)] {
        let cfg = DcnConfig::new(c, g);
        let x = random_tensor((2, c, 9, 8), 1.0, &mut seeded_rng(c as u64 + g as u64));
        let field = SamplingField::zeros(&cfg, 2, 9, 8);
        let y = match dcnv3_forward(&x, &field, &DcnWeights::identity(&cfg), &cfg) {
            Ok(y) => y,
            Err(e) => return outcome(false, format!("error: {e}")),
        };
        let mut boxw = Conv2dWeights::zeros(c, c, 3, 1, 1, c, false).unwrap();
        boxw.kernel.fill(1.0 / 9.0);
        worst = worst.max(interior_diff(&y, &conv2d(&x, &boxw).unwrap(), 1));
    }
    outcome(worst <= EXACT, format!("interior max |Δ| {worst:.1e} (≤{EXACT:e}) over 4 channel/group shapes"))
}

fn param_counts() -> Outcome {
    let mut parts = Vec::new();
    let mut pass = true;
    for (name, target) in TARGETS {
        let cfg = variant(name).unwrap().model_config();
        let closed = count_params(&cfg).unwrap().closed_form_total;
        let enumerated = enumerate_param_count(&cfg).unwrap();
        let dev = (closed as f64 - target) / target;
        pass &= dev.abs() <= PARAM_TOL && enumerated == closed;
        parts.push(format!("{name} {:.1}M ({:+.1}%{})", closed as f64 / 1e6, dev * 100.0, if enumerated == closed { "" } else { ", ENUM MISMATCH" }));
    }
    pass &= variant_registry().len() == TARGETS.len();
    let mut toy = ModelConfig::new(StackConfig::new(16, 16, 1, 1));
    toy.num_classes = 10;
    let toy_closed = count_params(&toy).unwrap().closed_form_total;
    let toy_ok = enumerate_param_count(&toy).unwrap() == toy_closed && build_model(&toy).unwrap().num_params() as u64 == toy_closed;
    pass &= toy_ok;
    outcome(pass, format!("{} (±15%); closed form = enumeration for all six + toy: {}", parts.join(", "), pass))
}

fn scaling() -> Outcome {
    let worst = ScaleFactors::SWEEP.iter().map(|&(a, b)| check_constraint(a, b).abs()).fold(0.0, f64::max);
    let t = variant("T").unwrap().stack;
    let s1 = scale_config(&t, &ScaleFactors::best(1.0), true).unwrap();
    let s2 = scale_config(&t, &ScaleFactors::best(2.0), true).unwrap();
    let small = variant("S").unwrap().stack;
    let base = variant("B").unwrap().stack;
    let pass = worst <= RESIDUAL_TOL
        && ScaleFactors::SWEEP.len() == 5
        && s1.stack.c1 == 80
        && s1.stack.depth() == 33
        && s1.stack == small
        && s2.stack.c1 == base.c1
        && s2.stack.c1 == 112;
    outcome(
        pass,
        format!(
            "max residual {worst:.4} (≤{RESIDUAL_TOL}) over 5 pairs; φ=1 → C1={} depth {} {}; φ=2 → C1={} depth {} vs B's {} (delta vs continuous {:+.2})",
            s1.stack.c1,
            s1.stack.depth(),
            s1.stack,
            s2.stack.c1,
            s2.stack.depth(),
            base.depth(),
            s2.depth_delta
        ),
    )
}

fn search_space() -> Outcome {
    let entries = enumerate_search_space();
    let valid: Vec<_> = entries.iter().filter(|e| e.is_valid()).collect();
    let within = valid.iter().filter(|e| e.budget_deviation().is_some_and(|d| d.abs() <= SEARCH_TOL)).count();
    let origin_l3 = entries
        .iter()
        .find(|e| e.stack.c1 == 64 && e.stack.cprime == 16 && e.stack.l1() == 4)
        .map(|e| e.stack.l3());
    let pass = entries.len() == SEARCH_SIZE && valid.len() == SEARCH_SIZE && within == SEARCH_SIZE;
    outcome(
        pass,
        format!(
            "{} combinations, {} pass the stacking rules, {} within ±5% of {}M (need {SEARCH_SIZE}/{SEARCH_SIZE}); (64,16,4) picks L3={} (origin has 18)",
            entries.len(),
            valid.len(),
            within,
            SEARCH_BUDGET / 1_000_000,
            origin_l3.map_or("-".into(), |v| v.to_string())
        ),
    )
}

fn embed(x: &Tensor4, h: usize, w: usize, dy: usize, dx: usize) -> Tensor4 {
    let s = x.shape();
    Tensor4::from_fn((s.n, s.c, h, w), |n, c, y, xx| {
        if y >= dy && xx >= dx && y - dy < s.h && xx - dx < s.w {
            x.at(n, c, y - dy, xx - dx)
        } else {
            0.0
        }
    })
}

fn translation() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for (i, row) in Ablation::ALL.into_iter().enumerate() {
        for (dy, dx) in [(1, 0), (0, 2), (3, 1), (2, 3)] {
            let seed = (i * 10 + dy * 4 + dx) as u64;
            let cfg = DcnConfig::new(8, 2).with_ablation(row);
            let mut rng = seeded_rng(seed);
            let content = random_tensor((1, 8, 6, 6), 1.0, &mut rng);
            let w = internimage::suite::random_instance(cfg, 1, 3, 3, &mut rng).w;
            // Zero margin wider than the furthest tap (|offset| < 2 plus the kernel radius).
            let (h, wd) = (6 + 8, 6 + 8);
            let base = embed(&content, h, wd, 4, 4);
            let moved = embed(&content, h, wd, 4 + dy, 4 + dx);
            let field = random_field(&cfg, 1, h, wd, 2.0, 3.0, seed);
            let shift = |t: &Tensor4| {
                let big = embed(t, h + dy, wd + dx, dy, dx);
                Tensor4::from_fn((1, t.shape().c, h, wd), |n, c, y, x| big.at(n, c, y, x))
            };
            let moved_field = SamplingField { offsets: shift(&field.offsets), mask_logits: shift(&field.mask_logits) };
            let y = dcnv3_forward(&base, &field, &w, &cfg).unwrap();
            let y2 = dcnv3_forward(&moved, &moved_field, &w, &cfg).unwrap();
            for c in 0..8 {
                for oy in 0..h - dy {
                    for ox in 0..wd - dx {
                        worst = worst.max((y.at(0, c, oy, ox) - y2.at(0, c, oy + dy, ox + dx)).abs());
                    }
                }
            }
            cases += 1;
        }
    }
    outcome(worst <= EXACT, format!("{cases} shifted instances over 4 rows, max |Δ| {worst:.1e} (≤{EXACT:e})"))
}

fn erf() -> Outcome {
    let cfg = ModelConfig::new(StackConfig::new(16, 16, 1, 1));
    let model = build_model(&cfg).unwrap();
    let img = synthetic_image(64, 64, 3);
    let mut probes = 0;
    let mut outside = 0;
    let mut empty = 0;
    let mut extent = Vec::new();
    for depth in [Depth::Stage(1), Depth::Stage(2)] {
        let mut widest = 0;
        for pixel in [(32, 32), (0, 0), (63, 17), (5, 50), (40, 8)] {
            let map = erf_map(&model, &img, depth, pixel).unwrap();
            let (sy, sx) = static_receptive_field(&cfg, depth, map.feature.0, map.feature.1).unwrap();
            let support: Vec<_> = map.support().collect();
            outside += support.iter().filter(|&&(y, x)| !(sy.contains(y as i64) && sx.contains(x as i64))).count();
            if support.is_empty() || map.max() <= 1e-6 {
                empty += 1;
            }
            widest = widest.max((sy.hi - sy.lo + 1) as usize);
            probes += 1;
        }
        extent.push(widest);
    }
    outcome(
        outside == 0 && empty == 0,
        format!(
            "{probes} probes at stages 1-2, {outside} support pixels outside the static field, {empty} empty maps; static field widths {}/{} px",
            extent[0], extent[1]
        ),
    )
}

fn training() -> Outcome {
    let dir = match tempfile::tempdir() {
        Ok(d) => d,
        Err(e) => return outcome(false, format!("error: {e}")),
    };
    let start = Instant::now();
    let spawn = |name: &str| {
        Command::new(env!("CARGO_BIN_EXE_internimage"))
            .args(["train-toy", "--steps", &TRAIN_STEPS.to_string(), "--seed", "0", "--csv", name])
            .current_dir(dir.path())
            .stdout(Stdio::null())
            .stderr(Stdio::piped())
            .spawn()
    };
    let (a, b) = match (spawn("a.csv"), spawn("b.csv")) {
        (Ok(a), Ok(b)) => (a, b),
        _ => return outcome(false, "could not start the train-toy command"),
    };
    let (ra, rb) = (a.wait_with_output(), b.wait_with_output());
    let elapsed = start.elapsed();
    for r in [&ra, &rb] {
        match r {
            Ok(o) if o.status.success() => {}
            Ok(o) => return outcome(false, format!("train-toy failed: {}", String::from_utf8_lossy(&o.stderr))),
            Err(e) => return outcome(false, format!("error: {e}")),
        }
    }
    let read = |name: &str| report::read_losses(std::fs::File::open(dir.path().join(name)).unwrap()).unwrap();
    let (la, lb) = (read("a.csv"), read("b.csv"));
    let same = la.len() == lb.len() && la.iter().zip(&lb).all(|(x, y)| x.to_bits() == y.to_bits());
    let first = la[0];
    let halved_at = la.iter().position(|&l| l <= first / 2.0);
    let last = *la.last().unwrap();
    let pass = la.len() == TRAIN_STEPS && same && halved_at.is_some() && last <= first / 2.0 && elapsed <= TRAIN_BUDGET;
    outcome(
        pass,
        format!(
            "loss {first:.4} → {last:.4} over {} steps, first halved at step {}, two runs bit-identical: {same}, {:.1}s for both (≤{}s)",
            la.len(),
            halved_at.map_or("never".into(), |s| s.to_string()),
            elapsed.as_secs_f64(),
            TRAIN_BUDGET.as_secs()
        ),
    )
}

fn serialization() -> Outcome {
    let mut configs: Vec<ModelConfig> = variant_registry().iter().map(|v| v.model_config()).collect();
    let t = variant("T").unwrap().stack;
    for phi in [0.5, 1.0, 2.0, 3.0] {
        let s = scale_config(&t, &ScaleFactors::best(phi), true).unwrap();
        configs.push(ModelConfig { name: format!("scaled-{phi}"), layer_scale: true, ..ModelConfig::new(s.stack) });
    }
    let mut odd = ModelConfig::new(StackConfig::new(16, 16, 1, 1));
    (odd.kernel, odd.ablation, odd.in_channels, odd.seed, odd.num_classes) = (5, Ablation::UnsharedWeights, 1, u64::MAX, 10);
    configs.push(odd);
    let config_ok = configs
        .iter()
        .all(|c| config_file::to_string(c).ok().and_then(|s| config_file::from_str(&s).ok()).as_ref() == Some(c));

    let dir = tempfile::tempdir().unwrap();
    let mut weights_ok = true;
    let mut tensors = 0;
    for (layer_scale, seed) in [(false, 3), (true, 4)] {
        let cfg = ModelConfig { layer_scale, seed, num_classes: 10, ..ModelConfig::new(StackConfig::new(16, 16, 1, 1)) };
        let mut model = build_model(&cfg).unwrap();
        // Random values everywhere, including the zero-initialized predictors.
        let mut rng = seeded_rng(seed);
        let values: Vec<f64> = (0..model.num_params()).map(|_| rng.random_range(-1.0..1.0) * 10f64.powi(rng.random_range(-300..300))).collect();
        model.assign_flat(&values);
        let path = dir.path().join(format!("w{seed}.bin"));
        weights::save(&path, &model).unwrap();
        let mut back = build_model(&ModelConfig { seed: seed + 100, ..cfg.clone() }).unwrap();
        weights::load_into(&path, &mut back).unwrap();
        let a: Vec<u64> = model.flatten().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u64> = back.flatten().iter().map(|v| v.to_bits()).collect();
        weights_ok &= a == b;
        tensors += model.tensor_specs().len();
    }
    outcome(
        config_ok && weights_ok,
        format!(
            "{} configs text→struct identical: {config_ok}; {tensors} weight tensors file→model bit-identical: {weights_ok}",
            configs.len()
        ),
    )
}

fn main() {
    if std::env::args().any(|a| a == "--list") {
        // `cargo test -- --list` probes test names; there is one.
        println!("acceptance: test");
        return;
    }
    let criteria: [Criterion; 11] = [
        ("gradient correctness", gradients),
        ("oracle equivalence", oracle),
        ("normalization invariant", normalization),
        ("degenerate equivalence", degenerate),
        ("parameter-count reproduction", param_counts),
        ("scaling rules", scaling),
        ("search space", search_space),
        ("translation equivariance", translation),
        ("erf sanity", erf),
        ("training smoke", training),
        ("serialization", serialization),
    ];
    let mut failed = Vec::new();
    for (i, (name, run)) in criteria.iter().enumerate() {
        let o = run();
        println!("[{}] {:>2} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, i + 1, o.detail);
        if !o.pass {
            failed.push(i + 1);
        }
    }
    println!("{}/{} criteria pass", criteria.len() - failed.len(), criteria.len());
    if !failed.is_empty() {
        println!("failing: {failed:?}");
        std::process::exit(1);
    }
}
