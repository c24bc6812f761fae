use std::path::Path;
use std::process::Command;

fn corrsched() -> Command {
    Command::new(env!("CARGO_BIN_EXE_corrsched"))
}

fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

const TINY: &str = r#"
[model]
num_sources = 3
p = 0.5

[sim]
episode_len = 20
episodes = 2
warmup_episodes = 1
seeds = 2

[policies]
list = ["mgf", "maf", "random"]

[sweep]
axis = "p"
values = [0.0, 1.0]
"#;

#[test]
fn run_writes_one_row_per_policy_and_point() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "tiny.toml", TINY);
    let out = dir.path().join("rows.csv");
    let status = corrsched()
        .args(["run", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .args(["--jobs", "1"])
        .status()
        .unwrap();
    assert!(status.success());
    let mut reader = csv::Reader::from_path(&out).unwrap();
    let headers = reader.headers().unwrap().clone();
    assert!(headers.iter().any(|h| h == "mean_disc_error"));
    assert_eq!(reader.records().count(), 6);
}

#[test]
fn export_penalties_writes_tables() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "tiny.toml", TINY);
    let out = dir.path().join("f.csv");
    let status = corrsched()
        .args(["export-penalties", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    assert!(std::fs::read_to_string(&out).unwrap().lines().count() > 3);
}

#[test]
fn bad_config_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.toml", "[model]\nnum_sources = 0\n");
    let status = corrsched()
        .args(["run", "--config"])
        .arg(&cfg)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));

    let cfg = write(dir.path(), "typo.toml", "[model]\nnum_source = 3\n");
    let status = corrsched()
        .args(["run", "--config"])
        .arg(&cfg)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn audit_reports_pass_and_fail() {
    let dir = tempfile::tempdir().unwrap();
    let base = "[model]\nnum_sources = 3\n[audit]\np_values = [0.0, 1.0]\ngrid_bound = 10\njoint_delta_bound = 8\ncyclic_instances = 3\ncyclic_delta_bound = 6\n";
    let cfg = write(dir.path(), "audit.toml", base);
    let out = dir.path().join("audit.txt");
    let o = corrsched()
        .args(["audit", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stdout)
    );
    assert!(std::fs::read_to_string(&out)
        .unwrap()
        .ends_with("overall: PASS\n"));

    // A cyclic tolerance no solver can meet must fail the audit.
    let strict = format!("{base}cyclic_tolerance = -1.0\n");
    let cfg = write(dir.path(), "strict.toml", &strict);
    let o = corrsched()
        .args(["audit", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stdout).contains("overall: FAIL"));
}
