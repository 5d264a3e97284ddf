use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const QUICK: &str = "class_counts = [2, 2]\nper_class_samples = 30\nrounds_per_task = 1\npool_size = 100\nm_max = 40\n";

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_fedreplay"));
    c.env_remove("FEDREPLAY_OUT_DIR");
    c
}

fn quick_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("quick.toml");
    fs::write(&path, QUICK).unwrap();
    path
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn single_seed_writes_report_pair() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick_config(dir.path());
    let out = dir.path().join("out");
    let o = bin()
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(out.join("dynamic/seed_0.json").exists());
    assert!(out.join("dynamic/seed_0.csv").exists());
    assert!(out.join("summary.json").exists());
}

#[test]
fn out_flag_beats_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick_config(dir.path());
    let (env_dir, flag_dir) = (dir.path().join("env"), dir.path().join("flag"));
    let o = bin()
        .env("FEDREPLAY_OUT_DIR", &env_dir)
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(&flag_dir)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(flag_dir.join("summary.json").exists());
    assert!(!env_dir.exists());

    let o = bin()
        .env("FEDREPLAY_OUT_DIR", &env_dir)
        .arg("--config")
        .arg(&cfg)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(env_dir.join("summary.json").exists());
}

#[test]
fn compare_writes_both_modes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick_config(dir.path());
    let out = dir.path().join("out");
    let o = bin()
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .arg("--compare")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("delta"));
    assert!(out.join("fixed_equal/seed_0.json").exists());
    let csv = fs::read_to_string(out.join("summary.csv")).unwrap();
    assert!(csv.lines().any(|l| l.starts_with("delta,")));
}

#[test]
fn unknown_sweep_key_fails_listing_keys() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick_config(dir.path());
    let o = bin()
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("out"))
        .args(["--sweep", "epochs", "--values", "1,2"])
        .output()
        .unwrap();
    assert!(!o.status.success());
    let msg = stderr(&o);
    assert!(msg.contains("lambda") && msg.contains("m_max"), "{msg}");
}

#[test]
fn bad_config_names_key_and_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    fs::write(&path, "rounds_per_task = 2\nbogus_key = 3\n").unwrap();
    let o = bin().arg("--config").arg(&path).output().unwrap();
    assert!(!o.status.success());
    let msg = stderr(&o);
    assert!(msg.contains("bogus_key") && msg.contains('2'), "{msg}");
}

#[test]
fn compare_conflicts_with_mode() {
    let o = bin().args(["--compare", "--mode", "fixed"]).output().unwrap();
    assert!(!o.status.success());
}
