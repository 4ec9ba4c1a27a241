use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_internimage")).args(args).current_dir(dir).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn config_from_variant_stack_and_scaling() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["config", "--variant", "T"], dir.path());
    assert!(o.status.success());
    let doc = stdout(&o);
    for line in ["c1 = 64", "cprime = 16", "l1 = 4", "l3 = 18"] {
        assert!(doc.lines().any(|l| l == line), "{line} missing from\n{doc}");
    }

    let o = run(&["config", "--c1", "64", "--cprime", "16", "--l1", "5", "--l3", "4"], dir.path());
    assert!(!o.status.success());
    assert!(stderr(&o).contains("L1 ≤ L3 violated"), "{}", stderr(&o));

    let o = run(&["config", "--scale-from", "T", "--phi", "1", "-o", "s.cfg"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let cfg = internimage::config_file::load(&dir.path().join("s.cfg")).unwrap();
    assert_eq!((cfg.stack.c1, cfg.stack.cprime, cfg.stack.depths), (80, 16, [4, 4, 21, 4]));

    let o = run(&["config", "--scale-from", "T", "--phi", "1", "--alpha", "1.5", "--beta", "1.5"], dir.path());
    assert!(!o.status.success());
    assert!(stderr(&o).contains("constraint"));
    assert!(!run(&["config", "--variant", "Q"], dir.path()).status.success());
}

#[test]
fn params_reports_targets_and_enumeration() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["params", "--variant", "T"], dir.path());
    assert!(stdout(&o).contains("30M target, within 15%"), "{}", stdout(&o));
    assert!(stdout(&o).contains("exact match"));
    let o = run(&["params", "--variant", "H", "--no-enumerate"], dir.path());
    assert!(stdout(&o).contains("1.08B target, within 15%"), "{}", stdout(&o));
    let o = run(&["params", "--toy"], dir.path());
    assert!(o.status.success() && stdout(&o).contains("closed form equals enumeration: exact match"));
}

#[test]
fn gradcheck_and_oracle_commands() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["gradcheck", "--scope", "op", "--rows", "sigmoid"], dir.path());
    assert!(o.status.success(), "{}{}", stdout(&o), stderr(&o));
    assert!(stdout(&o).contains("all 4 checks passed"));

    let o = run(&["gradcheck", "--scope", "op", "--rows", "dcnv3", "--step", "1e-2"], dir.path());
    assert!(stderr(&o).contains("warning: step 1e-2 is large"), "{}", stderr(&o));

    let a = run(&["oracle", "--seed", "4"], dir.path());
    assert!(a.status.success());
    assert!(stdout(&a).starts_with("100 trials"));
    assert_eq!(stdout(&a), stdout(&run(&["oracle", "--seed", "4"], dir.path())));
    assert!(run(&["oracle", "--toggles", "dcnv2", "--trials", "20"], dir.path()).status.success());
    assert!(!run(&["oracle", "--toggles", "dcnv4"], dir.path()).status.success());
}

#[test]
fn bench_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["bench", "--shape", "1,16,12,12", "--csv", "b.csv"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let mut r = csv::Reader::from_path(dir.path().join("b.csv")).unwrap();
    assert_eq!(r.headers().unwrap().iter().collect::<Vec<_>>(), internimage::report::BENCH_HEADER);
    let rows: Vec<_> = r.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[0][9].parse::<f64>().unwrap() > 0.0);
    assert!(rows[0][10].parse::<f64>().unwrap() > 0.0);
    assert!(!run(&["bench", "--reps", "3"], dir.path()).status.success());
}

#[test]
fn init_erf_and_search() {
    let dir = tempfile::tempdir().unwrap();
    assert!(run(&["init", "-o", "toy.bin"], dir.path()).status.success());
    let o = run(&["erf", "--weights", "toy.bin", "--stage", "1", "--pixel", "10,20", "--size", "32", "--out", "m"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let pgm = std::fs::read(dir.path().join("m.pgm")).unwrap();
    assert!(pgm.starts_with(b"P5\n32 32\n255\n"));
    assert_eq!(pgm.len(), b"P5\n32 32\n255\n".len() + 32 * 32);
    let csv_rows = std::fs::read_to_string(dir.path().join("m.csv")).unwrap().lines().count();
    assert_eq!(csv_rows, 1 + 32 * 32);
    assert!(!run(&["erf", "--pixel", "99,0", "--size", "32"], dir.path()).status.success());

    let o = run(&["search"], dir.path());
    let text = stdout(&o);
    assert!(text.starts_with("c1,cprime,l1,l3,params\n"));
    assert_eq!(text.lines().count(), 31);
}

#[test]
fn train_toy_guardrail_and_zero_rate() {
    let dir = tempfile::tempdir().unwrap();
    assert!(run(&["config", "--variant", "T", "--num-classes", "10", "-o", "t.cfg"], dir.path()).status.success());
    let o = run(&["train-toy", "--config", "t.cfg", "--steps", "1"], dir.path());
    assert!(!o.status.success());
    assert!(stderr(&o).contains("refusing"), "{}", stderr(&o));

    let o = run(&["train-toy", "--steps", "3", "--lr", "0", "--per-class", "1"], dir.path());
    assert!(o.status.success());
    let losses = internimage::report::read_losses(o.stdout.as_slice()).unwrap();
    assert_eq!(losses.len(), 3);
    assert!(losses.iter().all(|l| l.to_bits() == losses[0].to_bits()));
}

#[test]
fn thread_env_var_is_validated() {
    let dir = tempfile::tempdir().unwrap();
    let bad = Command::new(env!("CARGO_BIN_EXE_internimage"))
        .args(["oracle", "--trials", "1"])
        .env("DCN_THREADS", "zero")
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert!(!bad.status.success());
    let one = Command::new(env!("CARGO_BIN_EXE_internimage"))
        .args(["oracle", "--trials", "10"])
        .env("DCN_THREADS", "1")
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert!(one.status.success());
    assert_eq!(stdout(&one), stdout(&run(&["oracle", "--trials", "10"], dir.path())));
}
