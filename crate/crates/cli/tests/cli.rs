//! Binary-level checks: flag parsing, config resolution, exit codes, and
//! cross-process artifact handoff.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cpdm"))
}

fn fresh_dir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("cpdm-cli-{name}"));
    std::fs::remove_dir_all(&dir).ok();
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn schedule_dump_prints_documented_csv() {
    let out = bin().args(["schedule-dump", "--T", "4", "--s-var", "1"]).output().unwrap();
    assert!(out.status.success());
    let text = stdout(&out);
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "t,m,delta,c_x,c_y,c_eps,tilde_delta");
    let row2 = lines.nth(1).unwrap();
    assert!(row2.starts_with("2,"), "{row2}");
    let fields: Vec<&str> = row2.split(',').collect();
    assert_eq!(fields[2], "0.5");
    assert_eq!(fields[5], "0.5");
}

#[test]
fn usage_errors_exit_with_code_two() {
    let out = bin().arg("not-a-command").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = bin().output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn config_errors_exit_with_code_three() {
    let out = bin().args(["--T", "0", "schedule-dump"]).output().unwrap();
    assert_eq!(out.status.code(), Some(3));

    let dir = fresh_dir("badcfg");
    let path = dir.join("conf.json");
    std::fs::write(&path, "{\"tee\": 4}").unwrap();
    let out = bin()
        .args(["--config", path.to_str().unwrap(), "schedule-dump"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));

    let out = bin()
        .args(["eval", "--data", "/nonexistent", "--samples", "/nonexistent", "--out"])
        .arg(dir.join("eval"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn training_divergence_exits_with_code_four() {
    let dir = fresh_dir("diverge");
    let data = dir.join("data");
    let maps = dir.join("maps");
    run_ok(bin().args([
        "--seed", "3", "--image-size", "16", "gen-data", "--studies", "4", "--pairs", "1",
        "--out",
    ])
    .arg(&data));
    run_ok(bin().args(["make-maps", "--data"]).arg(&data).arg("--out").arg(&maps));

    let out = bin()
        .args([
            "--seed", "3", "--T", "20", "--train-steps", "50", "--batch", "2", "--loss", "l2",
            "--lr", "1e30", "train", "--data",
        ])
        .arg(&data)
        .arg("--maps")
        .arg(&maps)
        .arg("--out")
        .arg(dir.join("run"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn env_var_supplies_the_default_config() {
    let dir = fresh_dir("envcfg");
    let path = dir.join("conf.json");
    std::fs::write(&path, "{\"T\": 3, \"sample_steps\": 3}").unwrap();
    let out = bin()
        .env("CPDM_CONFIG", &path)
        .arg("schedule-dump")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(stdout(&out).lines().count(), 4);

    // An explicit flag still beats the environment.
    let out = bin()
        .env("CPDM_CONFIG", &path)
        .args(["--T", "5", "schedule-dump"])
        .output()
        .unwrap();
    assert_eq!(stdout(&out).lines().count(), 6);
}

#[test]
fn gen_data_workers_do_not_change_the_dataset() {
    let a = fresh_dir("workers-a");
    let b = fresh_dir("workers-b");
    run_ok(bin().args([
        "--seed", "11", "--image-size", "16", "gen-data", "--studies", "5", "--pairs", "2",
        "--workers", "1", "--out",
    ])
    .arg(&a));
    run_ok(bin().args([
        "--seed", "11", "--image-size", "16", "gen-data", "--studies", "5", "--pairs", "2",
        "--workers", "3", "--out",
    ])
    .arg(&b));

    assert_identical(&a.join("index.json"), &b.join("index.json"));
    assert_identical(&a.join("split.json"), &b.join("split.json"));
    assert_identical(
        &a.join("study_0003/pair_001_pet.cpdt"),
        &b.join("study_0003/pair_001_pet.cpdt"),
    );
}

#[test]
fn artifact_directories_carry_the_resolved_config() {
    let dir = fresh_dir("resolved");
    let data = dir.join("data");
    run_ok(bin().args([
        "--seed", "9", "--image-size", "16", "gen-data", "--studies", "3", "--pairs", "1",
        "--out",
    ])
    .arg(&data));
    let body = std::fs::read_to_string(data.join("resolved_config.json")).unwrap();
    let json: serde_json::Value = serde_json::from_str(&body).unwrap();
    assert_eq!(json["seed"], 9);
    assert_eq!(json["image_size"], 16);
    assert_eq!(json["T"], 1000);
    assert_eq!(json["ema"]["decay"], 0.995);
}

fn run_ok(cmd: &mut Command) {
    let out = cmd.output().unwrap();
    assert!(
        out.status.success(),
        "command failed: {}\n{}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
}

fn assert_identical(a: &Path, b: &Path) {
    let left = std::fs::read(a).unwrap();
    let right = std::fs::read(b).unwrap();
    assert_eq!(left, right, "{} differs from {}", a.display(), b.display());
}
