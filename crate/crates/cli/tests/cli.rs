use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str], cache: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_torsionworks"))
        .args(args)
        .env("TORSIONWORKS_CACHE", cache)
        .output()
        .unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn csv_column(text: &str, row: &str, column: &str) -> f64 {
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let k = header.iter().position(|h| *h == column).unwrap();
    let line = lines.find(|l| l.starts_with(&format!("{row},"))).unwrap();
    line.split(',').nth(k).unwrap().parse().unwrap()
}

#[test]
fn compare_systematic_matches_oracle_on_full_enumeration() {
    let w = tempfile::tempdir().unwrap();
    let mol = w.path().join("t3.json");
    assert!(run(&["generate", "t-alkane", "--t", "3", "--out", s(&mol)], w.path()).status.success());
    let out = w.path().join("cmp");
    let o = run(&["compare", "--molecule", s(&mol), "--budget", "216", "--runs", "2", "--out", s(&out)], w.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(out.join("compare.csv")).unwrap();
    let sys = csv_column(&csv, "systematic", "min_best_energy");
    let oracle = csv_column(&csv, "oracle", "min_best_energy");
    assert!((sys - oracle).abs() <= 1e-9, "{sys} vs {oracle}");
    assert!((sys + 0.9462626727552315).abs() <= 1e-9);
    let timing = std::fs::read_to_string(out.join("timing.csv")).unwrap();
    assert!(timing.starts_with("method,runs,mean_seconds,stderr_seconds\n"));
    assert_eq!(timing.lines().count(), 4);
}

#[test]
fn oracle_refuses_large_molecules() {
    let w = tempfile::tempdir().unwrap();
    let mol = w.path().join("t8.json");
    assert!(run(&["generate", "t-alkane", "--t", "8", "--out", s(&mol)], w.path()).status.success());
    let o = run(&["search", "--method", "oracle", "--molecule", s(&mol), "--out", s(&w.path().join("o"))], w.path());
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("oracle refused") && err.contains("6^8"), "{err}");
}

#[test]
fn config_errors_exit_with_two() {
    let w = tempfile::tempdir().unwrap();
    let p = w.path();
    let bad = p.join("bad.json");
    std::fs::write(&bad, r#"{"trainer": {"learning_rat": 0.1}}"#).unwrap();
    let o = run(&["train", "--config", s(&bad), "--out", s(&p.join("t"))], p);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("learning_rat"));

    std::fs::write(&bad, r#"{"trainer": {"learning_rate": -1.0}}"#).unwrap();
    let o = run(&["train", "--config", s(&bad), "--out", s(&p.join("t"))], p);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("learning_rate"));

    let o = run(&["search", "--method", "random", "--molecule", s(&p.join("missing.json")), "--out", s(p)], p);
    assert_eq!(o.status.code(), Some(2));

    let o = run(&["theory", "lock", "--config", s(&bad), "--out", s(&p.join("l"))], p);
    assert_eq!(o.status.code(), Some(2));

    let o = run(&["search", "--method", "bogus", "--molecule", "x", "--out", "y"], p);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn agent_search_needs_a_checkpoint() {
    let w = tempfile::tempdir().unwrap();
    let mol = w.path().join("m.smi");
    std::fs::write(&mol, "CCCCC\n").unwrap();
    let o = run(&["search", "--method", "agent", "--molecule", s(&mol), "--out", s(&w.path().join("a"))], w.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("--checkpoint"));
}

#[test]
fn smiles_search_writes_snapshot_and_conformers() {
    let w = tempfile::tempdir().unwrap();
    let mol = w.path().join("hexane.smi");
    std::fs::write(&mol, "CCCCCC\n").unwrap();
    let out = w.path().join("s");
    let o = run(&["--jobs", "1", "search", "--method", "systematic", "--molecule", s(&mol), "--budget", "20", "--out", s(&out)], w.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let run_json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("run.json")).unwrap()).unwrap();
    assert_eq!(run_json["command"], "search systematic");
    assert_eq!(run_json["config"]["budget"], 20);
    assert!(run_json["version"].as_str().unwrap().starts_with(env!("CARGO_PKG_VERSION")));
    let conformers: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("conformers.json")).unwrap()).unwrap();
    assert_eq!(conformers["records"].as_array().unwrap().len(), 20);
    let norm: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("normalizers.json")).unwrap()).unwrap();
    assert!(norm["Z0"].as_f64().unwrap() > 0.0);
}

#[test]
fn normalize_and_reuse() {
    let w = tempfile::tempdir().unwrap();
    let p = w.path();
    let mol = p.join("t2.json");
    assert!(run(&["generate", "t-alkane", "--t", "2", "--out", s(&mol)], p).status.success());
    assert!(p.join("t2.json.run.json").exists());
    let norm = p.join("norm.json");
    assert!(run(&["normalize", "--molecule", s(&mol), "--budget", "36", "--out", s(&norm)], p).status.success());
    let out = p.join("s");
    let o = run(
        &["search", "--method", "systematic", "--molecule", s(&mol), "--budget", "36", "--normalizers", s(&norm), "--out", s(&out)],
        p,
    );
    assert!(o.status.success());
    // The reference run scores exactly 1 under its own normalizers.
    let summary = std::fs::read_to_string(out.join("summary.csv")).unwrap();
    assert!((csv_column(&summary, "systematic", "gibbs_score") - 1.0).abs() < 1e-12);
}
