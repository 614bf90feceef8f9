use std::path::Path;
use std::process::Command;

fn bvmlab(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_bvmlab")).args(args).output().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_string_lossy().into_owned();
    let good = write(
        dir.path(),
        "good.json",
        r#"{"experiment": "tv", "family": "multinomial", "sweep": [{"d": 1, "n": 50}], "metrics": ["tv"], "seed": 1}"#,
    );
    let o = bvmlab(&["tv-sweep", "--config", &good, "--out", &out, "--workers", "2"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.path().join("tv.csv").exists());
    assert!(dir.path().join("tv.tv.dat").exists());

    let json = bvmlab(&["tv-sweep", "--config", &good, "--out", &out, "--format", "json", "--seed", "2"]);
    assert_eq!(json.status.code(), Some(0));
    let text = std::fs::read_to_string(dir.path().join("tv.json")).unwrap();
    assert!(text.contains("\"seed\": 2"));

    let bad = write(dir.path(), "bad.json", r#"{"experiment": "tv", "family": "multinomial", "sweep": [], "metrics": ["tv"], "seed": 1}"#);
    assert_eq!(bvmlab(&["tv-sweep", "--config", &bad, "--out", &out]).status.code(), Some(1));
    // metric outside the subcommand
    assert_eq!(bvmlab(&["diagnose", "--config", &good, "--out", &out]).status.code(), Some(1));

    let rows = write(
        dir.path(),
        "rows.json",
        r#"{"experiment": "audit", "family": "multinomial", "sweep": [{"d": 3, "n": 100}], "metrics": ["lemma-audits"], "seed": 1, "method": {"u_budget": 100}}"#,
    );
    assert_eq!(bvmlab(&["audit", "--config", &rows, "--out", &out]).status.code(), Some(3));
}

#[test]
fn el_solve_prints_kkt() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "el.json", r#"{"support": [[0.0], [1.0]], "eta": [0.3]}"#);
    let o = bvmlab(&["el-solve", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("q             0.700000000000 0.300000000000"), "{text}");
    assert!(text.contains("stationarity"));
    let infeasible = write(dir.path(), "inf.json", r#"{"support": [[0.0], [1.0]], "eta": [1.5]}"#);
    assert_eq!(bvmlab(&["el-solve", "--config", &infeasible]).status.code(), Some(2));
}

#[test]
fn diagnose_and_growth_run() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_string_lossy().into_owned();
    let diag = write(
        dir.path(),
        "diag.json",
        r#"{"experiment": "diag", "family": "multinomial", "sweep": [{"d": 2, "n": 400}], "metrics": ["lambda-curve", "a-n"], "seed": 1}"#,
    );
    assert_eq!(bvmlab(&["diagnose", "--config", &diag, "--out", &out]).status.code(), Some(0));
    let text = std::fs::read_to_string(dir.path().join("diag.csv")).unwrap();
    assert!(text.contains(",a-n,") && text.contains("lambda:c=8"));
    let growth = write(
        dir.path(),
        "growth.json",
        r#"{"experiment": "growth", "family": "multinomial", "sweep": [{"d": 2, "n": 100}, {"d": 3, "n": 10000}], "metrics": ["growth"], "seed": 1}"#,
    );
    let o = bvmlab(&["growth", "--config", &growth, "--out", &out]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8(o.stdout).unwrap().contains("growth:d^4/n:decreasing"));
}
