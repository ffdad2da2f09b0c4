use darkhorse::config::ExperimentConfig;
use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_darkhorse"))
}

fn preset_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, cfg: &ExperimentConfig) -> PathBuf {
    let p = dir.join("cfg.toml");
    std::fs::write(&p, cfg.to_toml()).unwrap();
    p
}

#[test]
fn missing_config_exits_2_naming_the_path() {
    let out = run(&["simulate", "--config", "/no/such/zero_loss.toml"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/no/such/zero_loss.toml"));
}

#[test]
fn malformed_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.toml");
    std::fs::write(&p, "seeds = 0\n").unwrap();
    let out = run(&["compare", "--config", p.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    std::fs::write(&p, "no_such_key = 1\n").unwrap();
    let out = run(&["compare", "--config", p.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_subcommand_and_flag_are_rejected() {
    let out = run(&["frobnicate"]);
    assert_ne!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    let out = run(&["compare", "--config", "x", "--bogus"]);
    assert_ne!(out.status.code(), Some(0));
}

#[test]
fn unwritable_output_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "").unwrap();
    let cfg = preset_path("deterministic.toml");
    let out = run(&[
        "compare",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        blocker.join("sub").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn failing_simulation_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::preset("deterministic").unwrap();
    cfg.relays = 8;
    let p = write_config(dir.path(), &cfg);
    let out = run(&[
        "simulate",
        "--config",
        p.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn simulate_twice_is_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let cfg = preset_path("lossy.toml");
    for d in [&a, &b] {
        let out = run(&[
            "simulate",
            "--config",
            cfg.to_str().unwrap(),
            "--seed",
            "1",
            "--out",
            d.path().to_str().unwrap(),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    for f in ["session.json", "trace.csv"] {
        let x = std::fs::read(a.path().join(f)).unwrap();
        assert!(!x.is_empty());
        assert_eq!(x, std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    let summary: serde_json::Value =
        serde_json::from_slice(&std::fs::read(a.path().join("session.json")).unwrap()).unwrap();
    assert!(summary["bootstrap_time_ns"].as_u64().unwrap() > 0);
    assert_eq!(summary["transfers"].as_array().unwrap().len(), 1);
}

#[test]
fn seed_flag_overrides_the_config() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let cfg = preset_path("lossy.toml");
    for (d, seed) in [(&a, "1"), (&b, "2")] {
        let out = run(&[
            "simulate",
            "--config",
            cfg.to_str().unwrap(),
            "--seed",
            seed,
            "--out",
            d.path().to_str().unwrap(),
        ]);
        assert!(out.status.success());
    }
    assert_ne!(
        std::fs::read(a.path().join("trace.csv")).unwrap(),
        std::fs::read(b.path().join("trace.csv")).unwrap()
    );
}

#[test]
fn paper_like_compare_has_every_size_and_system() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::preset("paper-like").unwrap();
    cfg.seeds = 2;
    let p = write_config(dir.path(), &cfg);
    let out = run(&[
        "compare",
        "--config",
        p.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let mut rd = csv::Reader::from_path(dir.path().join("compare.csv")).unwrap();
    assert_eq!(
        rd.headers().unwrap().iter().collect::<Vec<_>>(),
        ["system", "size_bytes", "metric", "median", "p25", "p75"]
    );
    let mut seen = BTreeSet::new();
    for r in rd.records() {
        let r = r.unwrap();
        assert_eq!(r.len(), 6);
        seen.insert((r[0].to_string(), r[1].parse::<u64>().unwrap()));
    }
    for mib in [1u64, 2, 4, 8] {
        for sys in ["darkhorse", "vanilla"] {
            assert!(seen.contains(&(sys.to_string(), mib << 20)), "{sys} {mib} MiB");
        }
    }
}

#[test]
fn golden_vectors_command_writes_the_shipped_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["golden-vectors", "--out", dir.path().to_str().unwrap()]);
    assert!(out.status.success());
    assert_eq!(
        std::fs::read_to_string(dir.path().join("golden_vectors.json")).unwrap(),
        include_str!("../golden/golden_vectors.json")
    );
}

#[test]
fn commands_leave_the_config_untouched() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::preset("deterministic").unwrap();
    let p = write_config(dir.path(), &cfg);
    let before = std::fs::read(&p).unwrap();
    let out = run(&[
        "bootstrap-bench",
        "--config",
        p.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success());
    assert_eq!(std::fs::read(&p).unwrap(), before);
}
