use std::fs;
use std::process::Command;

const SMALL: &str = r#"
trials = 2
methods = ["gamp-offgrid", "coarse-only"]

[scenario]
grid_side = 6
targets = 2
"#;

fn ogsync() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_ogsync"));
    c.env_remove("OGSYNC_OUT_DIR").args(["--threads", "1"]);
    c
}

#[test]
fn simulate_writes_tables() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.toml");
    fs::write(&cfg, SMALL).unwrap();
    let out = dir.path().join("out");
    let status = ogsync()
        .args(["simulate", "--config"])
        .arg(&cfg)
        .arg("--out-dir")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let results = fs::read_to_string(out.join("results.csv")).unwrap();
    assert!(results.starts_with("value,method,trial,seed,cd,cd_sqrt,rmse,iterations,active,error"));
    assert_eq!(results.lines().count(), 1 + 2 * 2);
    assert!(out.join("summary.json").exists());
    assert!(out.join("timings.csv").exists());
}

#[test]
fn out_dir_from_env_and_seed_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.toml");
    fs::write(&cfg, SMALL).unwrap();
    let run = |seed: &str, sub: &str| {
        let out = dir.path().join(sub);
        let status = ogsync()
            .env("OGSYNC_OUT_DIR", &out)
            .args(["simulate", "--methods", "coarse-only", "--seed", seed, "--config"])
            .arg(&cfg)
            .status()
            .unwrap();
        assert!(status.success());
        fs::read_to_string(out.join("results.csv")).unwrap()
    };
    let a = run("7", "a");
    let b = run("8", "b");
    assert_ne!(a, b);
    assert!(a.lines().skip(1).all(|l| l.contains(",coarse-only,")));
}

#[test]
fn unknown_key_reports_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "trials = 2\n\n[scenario]\nsides = 3\n").unwrap();
    let out = ogsync()
        .args(["simulate", "--config"])
        .arg(&cfg)
        .arg("--out-dir")
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 4"), "{err}");
}

#[test]
fn sweep_requires_section() {
    let dir = tempfile::tempdir().unwrap();
    let out = ogsync().arg("sweep").arg("--out-dir").arg(dir.path()).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("[sweep]"));
}
