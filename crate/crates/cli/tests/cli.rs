use std::path::PathBuf;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_exposure-sim"))
}

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures")
}

const SMALL: &str = "population 3\nhorizon_days 3\n36000 start 0 1\n37800 end 0 1\n90000 diagnose 0\n";

#[test]
fn run_writes_report_and_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("t.trace");
    std::fs::write(&trace, SMALL).unwrap();
    let report = dir.path().join("report.tsv");
    for mode in ["stateful", "stateless"] {
        let out = bin()
            .args(["run", "--trace"])
            .arg(&trace)
            .arg("--config")
            .arg(fixtures().join("default.toml"))
            .args(["--seed", "3", "--mode", mode, "--report"])
            .arg(&report)
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let table = std::fs::read_to_string(&report).unwrap();
        assert!(table.contains(&format!("run\tmode\t{mode}")));
        assert!(table.contains("audit\tunlinkability\tPASS"));
        let stdout = String::from_utf8_lossy(&out.stdout);
        assert!(stdout.contains("audit breach: PASS"), "{stdout}");
        assert!(stdout.contains("notified devices (1): [1]"), "{stdout}");
    }
}

#[test]
fn same_seed_same_report() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("t.trace");
    std::fs::write(&trace, SMALL).unwrap();
    let mut tables = Vec::new();
    for i in 0..2 {
        let report = dir.path().join(format!("r{i}.tsv"));
        let out = bin()
            .args(["run", "--trace"])
            .arg(&trace)
            .arg("--config")
            .arg(fixtures().join("default.toml"))
            .args(["--seed", "9", "--report"])
            .arg(&report)
            .output()
            .unwrap();
        assert!(out.status.success());
        tables.push(std::fs::read(&report).unwrap());
    }
    assert_eq!(tables[0], tables[1]);
}

#[test]
fn attacks_pass() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("t.trace");
    std::fs::write(&trace, SMALL).unwrap();
    for name in ["replay", "linkability", "one-entry"] {
        let out = bin()
            .args(["attack", "--name", name, "--seed", "1", "--trace"])
            .arg(&trace)
            .output()
            .unwrap();
        let stdout = String::from_utf8_lossy(&out.stdout);
        assert!(out.status.success(), "{name}: {stdout}");
        assert!(stdout.contains(": PASS"), "{stdout}");
    }
}

#[test]
fn malformed_trace_reports_line() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("bad.trace");
    std::fs::write(&trace, "population 2\nhorizon_days 1\n5 start 0 7\n").unwrap();
    let out = bin()
        .args(["run", "--trace"])
        .arg(&trace)
        .arg("--config")
        .arg(fixtures().join("default.toml"))
        .arg("--report")
        .arg(dir.path().join("r.tsv"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("t.trace");
    std::fs::write(&trace, SMALL).unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "epoch_duration = 900\n").unwrap();
    let out = bin()
        .args(["run", "--trace"])
        .arg(&trace)
        .arg("--config")
        .arg(&cfg)
        .arg("--report")
        .arg(dir.path().join("r.tsv"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}
