use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use dcnv3_core::dcn::Ablation;
use dcnv3_core::erf::{erf_map, static_receptive_field, synthetic_image};
use dcnv3_core::model::{
    audit_params, count_params, validate_stack, variant, Depth, Model, ModelConfig, ParamReport, StackConfig,
};
use dcnv3_core::scaling::{enumerate_search_space, scale_config, ScaleFactors, SEARCH_BUDGET, SEARCH_BUDGET_TOLERANCE};
use dcnv3_core::train::{train_toy, ToyRun, TOY_CLASSES};
use dcnv3_core::Shape4;
use internimage::bench::{bench_dcnv3, bench_model, MIN_REPS, MIN_WARMUPS};
use internimage::suite::{run_gradcheck, run_oracle, GradcheckOptions, OracleMode, Scope, LARGE_STEP, MAX_ULPS};
use internimage::{config_file, report, threads, weights};

/// DCNv3 operator and InternImage model family: configs, checks, benchmarks.
#[derive(Parser)]
#[command(name = "internimage", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a model config from a variant, explicit stack fields, or a scaling rule.
    Config(ConfigArgs),
    /// Parameter-count breakdown, checked against enumeration and the published counts.
    Params(ParamsArgs),
    /// Finite-difference gradient checks for the operator, a block and a tiny model.
    Gradcheck(GradcheckArgs),
    /// Compare the optimized operator against its naive transcription.
    Oracle(OracleArgs),
    /// Time the operator (optimized and naive) or a full model forward pass.
    Bench(BenchArgs),
    /// Effective receptive field of one feature location, as PGM and CSV.
    Erf(ErfArgs),
    /// Train a tiny model on the synthetic 10-class task.
    TrainToy(TrainArgs),
    /// Enumerate the (C1, L1, C') stacking search space as CSV.
    Search(SearchArgs),
    /// Build a model from its seed and write its weights.
    Init(InitArgs),
}

/// Picks a model config from the registry or a file.
#[derive(Args)]
struct ModelSelect {
    /// Registry variant (T, S, B, L, XL, H).
    #[arg(long, conflicts_with = "config")]
    variant: Option<String>,
    /// Config file written by `config`.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl ModelSelect {
    fn resolve(&self) -> Result<Option<ModelConfig>> {
        match (&self.variant, &self.config) {
            (Some(v), _) => Ok(Some(registry_config(v)?)),
            (None, Some(path)) => config_file::load(path).map(Some),
            (None, None) => Ok(None),
        }
    }
}

fn registry_config(name: &str) -> Result<ModelConfig> {
    variant(name).map(|v| v.model_config()).ok_or_else(|| anyhow!("unknown variant `{name}` (known: T, S, B, L, XL, H)"))
}

fn toy_config() -> ModelConfig {
    let mut cfg = ModelConfig::new(StackConfig::new(16, 16, 1, 1));
    cfg.name = "toy".into();
    cfg.num_classes = TOY_CLASSES;
    cfg
}

#[derive(Args)]
struct ConfigArgs {
    #[arg(long, conflicts_with_all = ["c1", "scale_from"])]
    variant: Option<String>,
    /// Origin variant for compound scaling.
    #[arg(long, requires = "phi")]
    scale_from: Option<String>,
    #[arg(long)]
    phi: Option<f64>,
    #[arg(long, default_value_t = ScaleFactors::BEST_ALPHA)]
    alpha: f64,
    #[arg(long, default_value_t = ScaleFactors::BEST_BETA)]
    beta: f64,
    /// Accept factors that break α·β^1.99 ≈ 2.
    #[arg(long)]
    lenient: bool,
    #[arg(long, requires_all = ["cprime", "l1", "l3"], conflicts_with = "scale_from")]
    c1: Option<usize>,
    #[arg(long)]
    cprime: Option<usize>,
    #[arg(long)]
    l1: Option<usize>,
    /// Defaults to L1.
    #[arg(long)]
    l2: Option<usize>,
    #[arg(long)]
    l3: Option<usize>,
    /// Defaults to L1.
    #[arg(long)]
    l4: Option<usize>,
    #[arg(long)]
    name: Option<String>,
    #[arg(long)]
    ffn_ratio: Option<usize>,
    #[arg(long)]
    layer_scale: Option<bool>,
    #[arg(long)]
    num_classes: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// DCN sampling-grid side (odd).
    #[arg(long)]
    kernel: Option<usize>,
    /// Operator variant: dcnv3, unshared, single-group, sigmoid.
    #[arg(long, value_parser = parse_ablation)]
    ablation: Option<Ablation>,
    /// Output file; the document goes to stdout otherwise.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

fn parse_ablation(s: &str) -> Result<Ablation, String> {
    Ablation::parse(s).ok_or_else(|| format!("unknown row `{s}` (dcnv3, unshared, single-group, sigmoid)"))
}

fn cmd_config(a: ConfigArgs) -> Result<()> {
    let mut notes = Vec::new();
    let mut cfg = if let Some(v) = &a.variant {
        registry_config(v)?
    } else if let Some(origin) = &a.scale_from {
        let base = registry_config(origin)?;
        let f = ScaleFactors::new(a.alpha, a.beta, a.phi.unwrap_or(0.0))?;
        let s = scale_config(&base.stack, &f, !a.lenient)?;
        notes.push(format!("constraint residual α·β^1.99 − 2 = {:+.4}", f.residual()));
        notes.push(format!("width  C1 {:.2} → {} (delta {:+.2})", s.width_cont, s.stack.c1, s.width_delta));
        notes.push(format!("depth  D {:.2} → {} (delta {:+.2})", s.depth_cont, s.stack.depth(), s.depth_delta));
        let mut cfg = ModelConfig { stack: s.stack, ..base };
        cfg.name = format!("{}-phi{}", cfg.name, f.phi);
        cfg.layer_scale = f.phi > 0.0 || cfg.layer_scale;
        cfg
    } else if let (Some(c1), Some(cprime), Some(l1), Some(l3)) = (a.c1, a.cprime, a.l1, a.l3) {
        let stack = StackConfig { c1, cprime, depths: [l1, a.l2.unwrap_or(l1), l3, a.l4.unwrap_or(l1)] };
        ModelConfig::new(stack)
    } else {
        bail!("choose --variant, --scale-from with --phi, or --c1/--cprime/--l1/--l3");
    };
    if let Some(v) = a.name {
        cfg.name = v;
    }
    if let Some(v) = a.ffn_ratio {
        cfg.ffn_ratio = v;
    }
    if let Some(v) = a.layer_scale {
        cfg.layer_scale = v;
    }
    if let Some(v) = a.num_classes {
        cfg.num_classes = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.kernel {
        cfg.kernel = v;
    }
    if let Some(v) = a.ablation {
        cfg.ablation = v;
    }
    if let Err(violations) = validate_stack(&cfg.stack) {
        let list: Vec<String> = violations.iter().map(ToString::to_string).collect();
        bail!("invalid stack {}: {}", cfg.stack, list.join("; "));
    }
    cfg.validate()?;
    let total = count_params(&cfg)?.closed_form_total;
    let doc = config_file::to_string(&cfg)?;
    let mut summary = vec![format!("stack {}: valid", cfg.stack), format!("closed-form parameters: {total}")];
    summary.extend(notes);
    match &a.out {
        Some(path) => {
            std::fs::write(path, doc).with_context(|| format!("writing {}", path.display()))?;
            summary.iter().for_each(|l| println!("{l}"));
            println!("wrote {}", path.display());
        }
        None => {
            print!("{doc}");
            summary.iter().for_each(|l| eprintln!("{l}"));
        }
    }
    Ok(())
}

#[derive(Args)]
struct ParamsArgs {
    #[command(flatten)]
    model: ModelSelect,
    /// Use the toy model (C1 = C' = 16, one block per stage, 10 classes).
    #[arg(long, conflicts_with_all = ["variant", "config"])]
    toy: bool,
    /// Skip the enumeration cross-check (it allocates one component at a time).
    #[arg(long)]
    no_enumerate: bool,
}

fn human(n: u64) -> String {
    if n >= 1_000_000_000 {
        format!("{}B", trim_float(n as f64 / 1e9))
    } else {
        format!("{}M", trim_float(n as f64 / 1e6))
    }
}

fn trim_float(v: f64) -> String {
    let s = format!("{v:.2}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

fn print_breakdown(r: &ParamReport) {
    println!("  stem          {:>14}", r.stem);
    for (i, s) in r.stages.iter().enumerate() {
        println!("  stage {}       {:>14}", i + 1, s);
    }
    for (i, d) in r.downsamplers.iter().enumerate() {
        println!("  downsample {}  {:>14}", i + 1, d);
    }
    println!("  head          {:>14}", r.head);
    println!("  total         {:>14}  ({})", r.closed_form_total, human(r.closed_form_total));
}

fn cmd_params(a: ParamsArgs) -> Result<()> {
    let cfg = if a.toy {
        toy_config()
    } else {
        a.model.resolve()?.ok_or_else(|| anyhow!("choose --variant, --config or --toy"))?
    };
    let report = if a.no_enumerate { count_params(&cfg)? } else { audit_params(&cfg)? };
    println!("{} {}", cfg.name, cfg.stack);
    print_breakdown(&report);
    if let Some(enumerated) = report.enumerated_total {
        if enumerated != report.closed_form_total {
            bail!("closed form {} differs from enumeration {enumerated}", report.closed_form_total);
        }
        println!("closed form equals enumeration: exact match");
    }
    if let Some(spec) = variant(&cfg.name) {
        let dev = (report.closed_form_total as f64 - spec.expected_params as f64) / spec.expected_params as f64;
        let verdict = if dev.abs() <= 0.15 { "within 15%" } else { "OUTSIDE 15%" };
        println!("{} target, {verdict} (deviation {:+.1}%)", human(spec.expected_params), 100.0 * dev);
    }
    Ok(())
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Central-difference step.
    #[arg(long, default_value_t = dcnv3_core::gradcheck::DEFAULT_STEP)]
    step: f64,
    /// Comma-separated operator rows (dcnv3, unshared, single-group, sigmoid) or `all`.
    #[arg(long, default_value = "all")]
    rows: String,
    /// Comma-separated scopes (op, block, model) or `all`.
    #[arg(long, default_value = "all")]
    scope: String,
}

fn parse_list<T: Copy>(s: &str, all: &[T], parse: impl Fn(&str) -> Option<T>) -> Result<Vec<T>> {
    if s == "all" {
        return Ok(all.to_vec());
    }
    s.split(',').map(|p| parse(p.trim()).ok_or_else(|| anyhow!("unknown entry `{p}`"))).collect()
}

fn cmd_gradcheck(a: GradcheckArgs) -> Result<()> {
    if a.step > LARGE_STEP {
        eprintln!(
            "warning: step {:e} is large; central differences carry O(h²) truncation error that dominates \
             at this size, so reported errors measure the step, not the gradient",
            a.step
        );
    }
    let opts = GradcheckOptions {
        seed: a.seed,
        step: a.step,
        rows: parse_list(&a.rows, &Ablation::ALL, Ablation::parse)?,
        scopes: parse_list(&a.scope, &Scope::ALL, |s| Scope::ALL.into_iter().find(|x| x.to_string() == s))?,
    };
    println!("{:<6} {:<13} {:<12} {:>7} {:>12} {:>8}", "scope", "row", "class", "checked", "max_rel_err", "result");
    let rows = run_gradcheck(&opts, |r| {
        println!(
            "{:<6} {:<13} {:<12} {:>7} {:>12.3e} {:>8}",
            r.scope.to_string(),
            r.row.name(),
            r.check.name,
            r.check.checked,
            r.check.max_rel_error,
            if r.passes() { "PASS" } else { "FAIL" }
        );
    })?;
    let failed: Vec<_> = rows.iter().filter(|r| !r.passes()).collect();
    if let Some(w) = failed.iter().max_by(|a, b| a.check.max_rel_error.total_cmp(&b.check.max_rel_error)) {
        bail!(
            "{} of {} checks failed; worst: {} {} {} index {} analytic {:e} numeric {:e} (rel err {:.3e} > {:e})",
            failed.len(),
            rows.len(),
            w.scope,
            w.row.name(),
            w.check.name,
            w.check.worst_index,
            w.check.worst_analytic,
            w.check.worst_numeric,
            w.check.max_rel_error,
            w.scope.tolerance()
        );
    }
    println!("all {} checks passed", rows.len());
    Ok(())
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    /// `all`, one operator row, or `dcnv2`.
    #[arg(long, default_value = "all")]
    toggles: String,
}

fn cmd_oracle(a: OracleArgs) -> Result<()> {
    let mode = OracleMode::parse(&a.toggles).ok_or_else(|| anyhow!("unknown toggles `{}`", a.toggles))?;
    let r = run_oracle(a.seed, a.trials, mode)?;
    println!(
        "{} trials ({}), max ulp deviation {} (trial {}), max |Δ| {:e}",
        r.trials, a.toggles, r.max_ulps, r.worst_trial, r.max_abs_diff
    );
    if !r.passes() {
        bail!("deviation {} ulps exceeds {MAX_ULPS}", r.max_ulps);
    }
    Ok(())
}

#[derive(Args)]
struct BenchArgs {
    /// `dcnv3` (optimized and naive rows) or `model`.
    #[arg(long, default_value = "dcnv3")]
    op: String,
    /// Operator input shape `n,c,h,w`.
    #[arg(long, default_value = "1,64,56,56", value_parser = parse_shape)]
    shape: Shape4,
    /// Operator groups; defaults to C / 16.
    #[arg(long)]
    groups: Option<usize>,
    #[command(flatten)]
    model: ModelSelect,
    /// Model input side.
    #[arg(long, default_value_t = 224)]
    size: usize,
    #[arg(long, default_value_t = 1)]
    batch: usize,
    #[arg(long, default_value_t = MIN_WARMUPS)]
    warmups: usize,
    #[arg(long, default_value_t = MIN_REPS)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// CSV output file; stdout otherwise.
    #[arg(long)]
    csv: Option<PathBuf>,
}

fn parse_shape(s: &str) -> Result<Shape4, String> {
    let v: Vec<usize> = s.split(',').map(|p| p.trim().parse().map_err(|_| format!("bad shape `{s}`"))).collect::<Result<_, _>>()?;
    match v[..] {
        [n, c, h, w] if n * c * h * w > 0 => Ok(Shape4::new(n, c, h, w)),
        _ => Err(format!("shape `{s}` must be four positive integers n,c,h,w")),
    }
}

fn cmd_bench(a: BenchArgs) -> Result<()> {
    let rows = match a.op.as_str() {
        "dcnv3" => bench_dcnv3(a.shape, a.groups.unwrap_or((a.shape.c / 16).max(1)), a.warmups, a.reps, a.seed)?.to_vec(),
        "model" => {
            let cfg = a.model.resolve()?.unwrap_or(registry_config("T")?);
            vec![bench_model(&cfg, a.batch, a.size, a.warmups, a.reps)?]
        }
        other => bail!("unknown op `{other}` (dcnv3, model)"),
    };
    for r in &rows {
        eprintln!(
            "{:<12} {:?}: median {:.3} ms, {:.2} images/s{}",
            r.op,
            r.shape.dims(),
            r.median * 1e3,
            r.throughput,
            r.speedup.map(|s| format!(", {s:.2}× naive")).unwrap_or_default()
        );
    }
    with_output(a.csv.as_deref(), |w| report::write_bench(w, &rows).map_err(Into::into))
}

/// Runs `f` on a buffered file, or stdout when no path is given.
fn with_output(path: Option<&Path>, f: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    match path {
        Some(p) => {
            let mut w = BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?);
            f(&mut w)?;
            w.flush()?;
        }
        None => {
            let mut out = io::stdout().lock();
            f(&mut out)?;
        }
    }
    Ok(())
}

#[derive(Args)]
struct ErfArgs {
    #[command(flatten)]
    model: ModelSelect,
    /// Weight file written by `init` (or training); seeded init otherwise.
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Side of the synthetic input image.
    #[arg(long, default_value_t = 64)]
    size: usize,
    /// Input pixel `y,x`; defaults to the centre.
    #[arg(long)]
    pixel: Option<String>,
    /// `stem` or a stage number 1–4.
    #[arg(long, default_value = "1")]
    stage: String,
    /// Output prefix: writes `<prefix>.pgm` and `<prefix>.csv`.
    #[arg(long, default_value = "erf")]
    out: PathBuf,
}

fn cmd_erf(a: ErfArgs) -> Result<()> {
    let cfg = a.model.resolve()?.unwrap_or_else(toy_config);
    let mut model = Model::build(&cfg)?;
    if let Some(w) = &a.weights {
        weights::load_into(w, &mut model).with_context(|| format!("loading {}", w.display()))?;
    }
    let depth = match a.stage.as_str() {
        "stem" => Depth::Stem,
        s => Depth::Stage(s.parse().map_err(|_| anyhow!("stage must be `stem` or 1-4, got `{s}`"))?),
    };
    let pixel = match &a.pixel {
        Some(p) => {
            let (y, x) = p.split_once(',').ok_or_else(|| anyhow!("pixel must be `y,x`"))?;
            (y.trim().parse()?, x.trim().parse()?)
        }
        None => (a.size / 2, a.size / 2),
    };
    let img = synthetic_image(a.size, a.size, cfg.in_channels);
    let map = erf_map(&model, &img, depth, pixel)?;
    let (sy, sx) = static_receptive_field(&cfg, depth, map.feature.0, map.feature.1)?;
    let (mut y0, mut y1, mut x0, mut x1) = (usize::MAX, 0, usize::MAX, 0);
    for (y, x) in map.support() {
        (y0, y1, x0, x1) = (y0.min(y), y1.max(y), x0.min(x), x1.max(x));
    }
    println!("feature location {:?} at {depth:?} for pixel {pixel:?}", map.feature);
    println!("static receptive field rows {}..={}, cols {}..={}", sy.lo, sy.hi, sx.lo, sx.hi);
    if y0 <= y1 {
        println!("gradient support rows {y0}..={y1}, cols {x0}..={x1}, peak {:e}", map.max());
    } else {
        println!("gradient support is empty");
    }
    let pgm = a.out.with_extension("pgm");
    let csv = a.out.with_extension("csv");
    report::write_pgm(BufWriter::new(File::create(&pgm)?), &map)?;
    report::write_erf_csv(File::create(&csv)?, &map)?;
    println!("wrote {} and {}", pgm.display(), csv.display());
    Ok(())
}

#[derive(Args)]
struct TrainArgs {
    /// Config file; defaults to the toy model.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 200)]
    steps: usize,
    #[arg(long, default_value_t = 0.05)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 2)]
    per_class: usize,
    /// Loss-curve CSV; stdout otherwise.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Save trained weights here.
    #[arg(long)]
    save: Option<PathBuf>,
}

fn cmd_train_toy(a: TrainArgs) -> Result<()> {
    let cfg = match &a.config {
        Some(p) => config_file::load(p)?,
        None => toy_config(),
    };
    let run = ToyRun { steps: a.steps, lr: a.lr, seed: a.seed, per_class: a.per_class };
    let every = (a.steps / 10).max(1);
    let (losses, model) = train_toy(&cfg, &run, &mut |step, loss| {
        if step % every == 0 || step + 1 == a.steps {
            eprintln!("step {step:>5}  loss {loss:.6}");
        }
    })?;
    if let (Some(first), Some(last)) = (losses.first(), losses.last()) {
        eprintln!("loss {first:.6} → {last:.6} (ratio {:.4})", last / first);
    }
    if let Some(path) = &a.save {
        weights::save(path, &model)?;
    }
    with_output(a.csv.as_deref(), |w| report::write_losses(w, &losses).map_err(Into::into))
}

#[derive(Args)]
struct SearchArgs {
    /// CSV output file; stdout otherwise.
    #[arg(long)]
    csv: Option<PathBuf>,
}

fn cmd_search(a: SearchArgs) -> Result<()> {
    let entries = enumerate_search_space();
    let limit = SEARCH_BUDGET_TOLERANCE;
    for e in &entries {
        let status = match (e.budget_deviation(), e.violations.first()) {
            (_, Some(v)) => format!("invalid: {v}"),
            (Some(d), None) if d.abs() <= limit => format!("{:+.1}% of budget", 100.0 * d),
            (Some(d), None) => format!("{:+.1}% of budget, outside ±{}%", 100.0 * d, 100.0 * limit),
            (None, None) => "uncounted".into(),
        };
        eprintln!("{}  {status}", e.stack);
    }
    let ok = entries.iter().filter(|e| e.is_valid() && e.budget_deviation().is_some_and(|d| d.abs() <= limit)).count();
    eprintln!("{} combinations, {ok} valid and within {}% of {}", entries.len(), 100.0 * limit, human(SEARCH_BUDGET));
    with_output(a.csv.as_deref(), |w| report::write_search(w, &entries).map_err(Into::into))
}

#[derive(Args)]
struct InitArgs {
    #[command(flatten)]
    model: ModelSelect,
    /// Weight file to write.
    #[arg(short, long)]
    out: PathBuf,
}

fn cmd_init(a: InitArgs) -> Result<()> {
    let cfg = a.model.resolve()?.unwrap_or_else(toy_config);
    let model = Model::build(&cfg)?;
    weights::save(&a.out, &model)?;
    println!("wrote {} parameters of {} to {}", dcnv3_core::params::Parameters::num_params(&model), cfg.name, a.out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    threads::init_from_env()?;
    match cli.command {
        Command::Config(a) => cmd_config(a),
        Command::Params(a) => cmd_params(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::Oracle(a) => cmd_oracle(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Erf(a) => cmd_erf(a),
        Command::TrainToy(a) => cmd_train_toy(a),
        Command::Search(a) => cmd_search(a),
        Command::Init(a) => cmd_init(a),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
