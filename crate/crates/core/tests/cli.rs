mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use common::{small_class, FAST};

fn magic(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_magic"))
        .args(args)
        .env_remove("MAGIC_CONFIG")
        .env_remove("MAGIC_SEED")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn setup(dir: &Path) -> (String, String) {
    let data = dir.join("data");
    small_class(&data, "widget");
    let cfg = dir.join("fast.cfg");
    fs::write(&cfg, FAST).unwrap();
    (data.to_string_lossy().into_owned(), cfg.to_string_lossy().into_owned())
}

#[test]
fn split_reports_round_down() {
    let dir = tempfile::tempdir().unwrap();
    let (data, _) = setup(dir.path());
    let o = magic(&["split", "--data", &data, "--class", "widget"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).lines().next(), Some("3 train / 7 test"));
}

#[test]
fn help_exits_zero() {
    let o = magic(&["generate", "--help"]);
    assert!(o.status.success());
    let text = stdout(&o);
    for flag in ["--n", "--cama", "--out", "--class", "--seed", "--config", "MAGIC_"] {
        assert!(text.contains(flag), "{flag} missing from help");
    }
}

#[test]
fn unknown_flag_fails() {
    let o = magic(&["split", "--bogus"]);
    assert!(!o.status.success());
}

#[test]
fn malformed_config_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let (data, _) = setup(dir.path());
    let bad = dir.path().join("bad.cfg");
    fs::write(&bad, "sigma: 1.0\n").unwrap();
    let o = magic(&["split", "--config", bad.to_str().unwrap(), "--data", &data, "--class", "widget"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("bad.cfg"));
}

#[test]
fn missing_checkpoint_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let (data, cfg) = setup(dir.path());
    let out = dir.path().join("gen");
    let o = magic(&["generate", "--config", &cfg, "--data", &data, "--class", "widget", "--n", "1", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(5));
}

#[test]
fn train_generate_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (data, cfg) = setup(dir.path());
    let runs = dir.path().join("runs");
    let runs_s = runs.to_str().unwrap();
    let o = magic(&["train", "--config", &cfg, "--data", &data, "--class", "widget", "--out", runs_s]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(runs.join("widget.ckpt").is_file());
    let curve = fs::read_to_string(runs.join("widget_loss.txt")).unwrap();
    assert_eq!(curve.lines().count(), 21);

    let gen = runs.join("gen");
    let gen_s = gen.to_str().unwrap();
    let o = magic(&[
        "generate", "--config", &cfg, "--data", &data, "--class", "widget", "--n", "3", "--cama", "off", "--seed", "9",
        "--out", gen_s,
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let manifest = gen.join("manifest.tsv");
    assert!(fs::read_to_string(&manifest).unwrap().starts_with("# magic-manifest v1"));

    let o = magic(&["eval", "--manifest", manifest.to_str().unwrap(), "--data", &data, "--class", "widget"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report = stdout(&o);
    assert!(report.contains("kid_x1000 = ") && report.contains("n_real = 7") && report.contains("n_generated = 3"));

    let align_out = dir.path().join("aligned");
    let o = magic(&["align", "--data", &data, "--class", "widget", "--out", align_out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("q_c = "));
}

#[test]
fn eval_with_single_samples_propagates_kid_precondition() {
    let dir = tempfile::tempdir().unwrap();
    setup(dir.path());
    let (real, gen) = (dir.path().join("real"), dir.path().join("gen"));
    fs::create_dir_all(&real).unwrap();
    fs::create_dir_all(&gen).unwrap();
    let src = dir.path().join("data/widget/normal/good_000.png");
    fs::copy(&src, real.join("a.png")).unwrap();
    fs::copy(&src, gen.join("b.png")).unwrap();
    let o = magic(&["eval", "--real", real.to_str().unwrap(), "--generated", gen.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(6));
    assert!(String::from_utf8_lossy(&o.stderr).contains("at least 2"));
}

#[test]
fn env_vars_stand_in_for_flags() {
    let dir = tempfile::tempdir().unwrap();
    let (data, _) = setup(dir.path());
    let o = Command::new(env!("CARGO_BIN_EXE_magic"))
        .arg("split")
        .env("MAGIC_DATA", &data)
        .env("MAGIC_CLASS", "widget")
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(stdout(&o).starts_with("3 train / 7 test"));
}
