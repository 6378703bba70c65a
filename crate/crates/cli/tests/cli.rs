//! The `m2a` binary end to end: synthesize, validate, and reject bad input.

use std::path::{Path, PathBuf};
use std::process::Command;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn m2a(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_m2a"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

#[test]
fn synth_run_then_validate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("m2a.toml");
    std::fs::write(
        &cfg,
        format!("[gateway]\nrules = {:?}\n", fixture("synth_rules.json").display().to_string()),
    )
    .unwrap();
    let out = dir.path().join("corpus");
    let run = m2a(&[
        "synth",
        "--config", cfg.to_str().unwrap(),
        "--host", fixture("synth_hosts.json").to_str().unwrap(),
        "--catalog", fixture("catalog").to_str().unwrap(),
        "--out", out.to_str().unwrap(),
        "--seed", "3",
    ]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    assert_eq!(std::fs::read_dir(&out).unwrap().count(), 3);

    let check = m2a(&["synth", "validate", out.to_str().unwrap()]);
    assert!(check.status.success(), "{}", String::from_utf8_lossy(&check.stderr));
    assert!(String::from_utf8_lossy(&check.stdout).contains("3 conversations OK"));
}

#[test]
fn invalid_config_is_reported_not_served() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[gateway]\nrules = \"r.json\"\n[memory_manager]\ncontext_window = 0\n").unwrap();
    let out = m2a(&["serve", "--config", cfg.to_str().unwrap(), "--bind", "127.0.0.1:0"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("context_window"));
}

#[test]
fn unknown_system_name_is_a_usage_error() {
    let out = m2a(&["eval", "run", "--config", "x.toml", "--corpus", "c.json", "--system", "m3a", "--out", "o"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("m2a_single_pass"));
}
