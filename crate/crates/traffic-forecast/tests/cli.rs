//! End-to-end tests of the command-line binary: artifact formats,
//! determinism of every subcommand, and the documented exit codes.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_traffic-forecast");

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "command {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("read {}: {e}", path.display()))
}

/// Generate a tiny dataset + mapping in `dir` and return the common
/// data/mapping flags.
fn fixture(dir: &Path) -> Vec<String> {
    let d = dir.to_str().unwrap();
    ok(&["generate", "--out", d, "--services", "3", "--days", "1", "--grid", "3x3", "--seed", "4"]);
    let data = dir.join("traffic.csv");
    let mapping = dir.join("mapping.txt");
    ok(&[
        "map-grid",
        "--data",
        data.to_str().unwrap(),
        "--grid",
        "3x3",
        "--out",
        mapping.to_str().unwrap(),
    ]);
    vec![
        "--data".into(),
        data.to_str().unwrap().into(),
        "--mapping".into(),
        mapping.to_str().unwrap().into(),
    ]
}

fn train_small(dir: &Path, data_flags: &[String], model: &str, seed: &str) -> PathBuf {
    let mut args: Vec<&str> = vec!["train"];
    args.extend(data_flags.iter().map(String::as_str));
    let out = dir.to_str().unwrap();
    args.extend([
        "--model", model, "--epochs", "2", "--t-in", "4", "--horizon", "2", "--stride", "24",
        "--seed", seed, "--out", out,
    ]);
    ok(&args);
    dir.join(format!("{model}.ckpt"))
}

#[test]
fn generate_is_deterministic_and_records_seed() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        ok(&[
            "generate", "--out", d.to_str().unwrap(), "--services", "2", "--days", "1", "--grid",
            "2x2", "--seed", "9",
        ]);
    }
    assert_eq!(
        std::fs::read(a.join("traffic.csv")).unwrap(),
        std::fs::read(b.join("traffic.csv")).unwrap()
    );
    assert_eq!(
        std::fs::read(a.join("manifest.json")).unwrap(),
        std::fs::read(b.join("manifest.json")).unwrap()
    );
    let manifest: serde_json::Value =
        serde_json::from_str(&read(&a.join("manifest.json"))).unwrap();
    assert_eq!(manifest["seed"], 9);
}

#[test]
fn generate_rejects_zero_days_as_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["generate", "--out", dir.path().to_str().unwrap(), "--days", "0"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn map_grid_rows_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let flags = fixture(dir.path());
    let mapping = dir.path().join("mapping.txt");
    let first = read(&mapping);
    let data_rows = first.lines().filter(|l| !l.starts_with('#')).count();
    // grid + origin + spacing + column header + 9 antennas
    assert_eq!(data_rows, 4 + 9);

    let again = dir.path().join("mapping2.txt");
    ok(&[
        "map-grid",
        "--data",
        &flags[1],
        "--grid",
        "3x3",
        "--out",
        again.to_str().unwrap(),
    ]);
    assert_eq!(first, read(&again));
}

#[test]
fn map_grid_too_small_suggests_dims() {
    let dir = tempfile::tempdir().unwrap();
    let flags = fixture(dir.path());
    let out = run(&[
        "map-grid",
        "--data",
        &flags[1],
        "--grid",
        "2x2",
        "--out",
        dir.path().join("nope.txt").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("try --grid"), "{err}");
}

#[test]
fn train_is_deterministic_and_persistence_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let flags = fixture(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    std::fs::create_dir_all(&a).unwrap();
    std::fs::create_dir_all(&b).unwrap();
    train_small(&a, &flags, "mlp", "1");
    train_small(&b, &flags, "mlp", "1");
    assert_eq!(read(&a.join("mlp_loss.csv")), read(&b.join("mlp_loss.csv")));
    assert_eq!(
        std::fs::read(a.join("mlp.ckpt")).unwrap(),
        std::fs::read(b.join("mlp.ckpt")).unwrap()
    );

    let mut args: Vec<&str> = vec!["train"];
    args.extend(flags.iter().map(String::as_str));
    args.extend(["--model", "persistence", "--out", a.to_str().unwrap()]);
    assert_eq!(run(&args).status.code(), Some(2));
}

#[test]
fn zero_lr_training_changes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let flags = fixture(dir.path());
    let mut args: Vec<&str> = vec!["train"];
    args.extend(flags.iter().map(String::as_str));
    let out = dir.path().to_str().unwrap();
    args.extend([
        "--model", "mlp", "--epochs", "3", "--t-in", "4", "--horizon", "2", "--stride", "24",
        "--lr", "0", "--seed", "2", "--out", out,
    ]);
    ok(&args);
    let loss = read(&dir.path().join("mlp_loss.csv"));
    let vals: Vec<&str> = loss
        .lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with("epoch"))
        .map(|l| l.split(',').nth(2).unwrap())
        .collect();
    assert_eq!(vals.len(), 3);
    assert!(vals.windows(2).all(|w| w[0] == w[1]), "{loss}");
}

#[test]
fn evaluate_artifacts_have_contracted_shapes() {
    let dir = tempfile::tempdir().unwrap();
    let flags = fixture(dir.path());
    let ckpt = train_small(dir.path(), &flags, "mlp", "1");
    let mut args: Vec<&str> = vec!["evaluate"];
    args.extend(flags.iter().map(String::as_str));
    let catalog = dir.path().join("catalog.csv");
    let out = dir.path().join("eval");
    args.extend([
        "--catalog",
        catalog.to_str().unwrap(),
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--stride",
        "8",
        "--out",
        out.to_str().unwrap(),
    ]);
    ok(&args);

    let per_step = read(&out.join("mlp_mae_per_step.csv"));
    let rows = per_step.lines().filter(|l| !l.starts_with('#') && !l.starts_with("step")).count();
    assert_eq!(rows, 2); // K = 2

    let by_category = read(&out.join("mlp_nmae_category.csv"));
    let rows = by_category
        .lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with("category"))
        .count();
    assert_eq!(rows, 3); // 3 services with distinct categories

    // rerunning the evaluation reproduces the files byte for byte
    ok(&args);
    assert_eq!(per_step, read(&out.join("mlp_mae_per_step.csv")));
}

#[test]
fn evaluate_refuses_checkpoint_from_other_data() {
    let dir = tempfile::tempdir().unwrap();
    let flags = fixture(dir.path());
    let ckpt = train_small(dir.path(), &flags, "mlp", "1");
    // regenerate with a different seed: same shape, different bytes
    let other = dir.path().join("other");
    ok(&[
        "generate", "--out", other.to_str().unwrap(), "--services", "3", "--days", "1", "--grid",
        "3x3", "--seed", "5",
    ]);
    let mut args: Vec<&str> = vec!["evaluate"];
    let data = other.join("traffic.csv");
    let catalog = dir.path().join("catalog.csv");
    let eval_dir = dir.path().join("eval");
    args.extend(["--data", data.to_str().unwrap(), "--mapping", &flags[3]]);
    args.extend([
        "--catalog",
        catalog.to_str().unwrap(),
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--out",
        eval_dir.to_str().unwrap(),
    ]);
    let out = run(&args);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("different data"));
}

#[test]
fn compare_table_format_and_self_consistency() {
    let dir = tempfile::tempdir().unwrap();
    let flags = fixture(dir.path());
    let ckpt = train_small(dir.path(), &flags, "mlp", "1");
    let table_path = dir.path().join("comparison.csv");
    let mut args: Vec<&str> = vec!["compare"];
    args.extend(flags.iter().map(String::as_str));
    let catalog = dir.path().join("catalog.csv");
    args.extend([
        "--catalog",
        catalog.to_str().unwrap(),
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--stride",
        "8",
        "--out",
        table_path.to_str().unwrap(),
    ]);
    ok(&args);
    let table = read(&table_path);
    let lines: Vec<&str> = table.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(lines[0], "model,mae,psnr_db,ssim,best");
    // identical checkpoints -> identical metric columns
    let strip = |l: &str| l.rsplit_once(',').unwrap().0.to_string();
    assert_eq!(strip(lines[1]), strip(lines[2]));
    // exactly one best flag
    assert_eq!(lines[1..].iter().filter(|l| l.ends_with(",yes")).count(), 1);
}

#[test]
fn compare_needs_two_models() {
    let dir = tempfile::tempdir().unwrap();
    let flags = fixture(dir.path());
    let ckpt = train_small(dir.path(), &flags, "mlp", "1");
    let mut args: Vec<&str> = vec!["compare"];
    args.extend(flags.iter().map(String::as_str));
    let catalog = dir.path().join("catalog.csv");
    let cmp = dir.path().join("cmp.csv");
    args.extend([
        "--catalog",
        catalog.to_str().unwrap(),
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--out",
        cmp.to_str().unwrap(),
    ]);
    assert_eq!(run(&args).status.code(), Some(2));
}

#[test]
fn predict_rows_clamped_and_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let flags = fixture(dir.path());
    let ckpt = train_small(dir.path(), &flags, "mlp", "1");
    let out_path = dir.path().join("forecast.csv");
    let mut args: Vec<&str> = vec!["predict"];
    args.extend(flags.iter().map(String::as_str));
    args.extend([
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--out",
        out_path.to_str().unwrap(),
    ]);
    ok(&args);
    let first = read(&out_path);
    let rows: Vec<&str> = first
        .lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with("timestamp"))
        .collect();
    assert_eq!(rows.len(), 2 * 3 * 9); // K * |S| * |A|
    for row in &rows {
        let volume: f64 = row.rsplit(',').next().unwrap().parse().unwrap();
        assert!(volume >= 0.0, "{row}");
    }
    ok(&args);
    assert_eq!(first, read(&out_path));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(run(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(run(&["train", "--model", "transformer"]).status.code(), Some(1));
    assert_eq!(run(&[]).status.code(), Some(1));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}
