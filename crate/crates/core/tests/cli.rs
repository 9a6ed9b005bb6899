//! End-to-end runs of the command-line driver.

use std::path::Path;
use std::process::Command;

use spaceflow::cli::run_from;

fn run(args: &[&str], out: &Path) -> i32 {
    let argv = std::iter::once("spaceflow".to_string())
        .chain(args.iter().map(|s| s.to_string()))
        .chain(["--out".to_string(), out.display().to_string()]);
    run_from(argv)
}

fn read_csv(path: &Path) -> Vec<csv::StringRecord> {
    csv::Reader::from_path(path).unwrap().records().map(|r| r.unwrap()).collect()
}

fn column(path: &Path, name: &str) -> Vec<String> {
    let mut r = csv::Reader::from_path(path).unwrap();
    let idx = r.headers().unwrap().iter().position(|h| h == name).unwrap_or_else(|| panic!("no column {name}"));
    r.records().map(|rec| rec.unwrap()[idx].to_string()).collect()
}

#[test]
fn simulate_sphere_converges_immediately() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    assert_eq!(run(&["simulate", "--eps", "-1", "--n", "3", "--k", "2", "--weight", "pow:2", "--shape", "sphere:1.0"], out), 0);
    assert_eq!(column(&out.join("simulate.csv"), "converged"), ["true"]);
    let rows = read_csv(&out.join("runs/sphere.csv"));
    assert!(!rows.is_empty());
    for row in &rows {
        assert_eq!(row, &rows[0], "series must stay constant on a sphere");
    }
    let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("runs/sphere.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["epsilon"], -1);
    assert_eq!(manifest["config"]["weights"][0], "pow:2");
    assert_eq!(manifest["audit"]["passed"], true);
    assert!(out.join("config.json").is_file());
}

#[test]
fn simulate_corpus_is_monotone() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    assert_eq!(run(&["simulate", "--k", "2", "--weight", "pow:2", "--weight", "lin-pow:2", "--corpus", "count=2", "--N", "48"], out), 0);
    assert_eq!(column(&out.join("simulate.csv"), "audit_passed"), ["true", "true"]);
    let audited = column(&out.join("audit.csv"), "passed");
    assert!(audited.len() >= 2 * 4 && audited.iter().all(|p| p == "true"));
}

#[test]
fn verify_quermass_gaps_are_non_negative() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    assert_eq!(run(&["verify", "--thm", "quermass", "--k", "2", "--l", "1", "--corpus", "count=4", "--N", "256"], out), 0);
    let gaps = column(&out.join("gaps.csv"), "gap");
    // two reports (W_l and ∫λ′ comparisons) per shape
    assert_eq!(gaps.len(), 8);
    assert!(gaps.iter().all(|g| g.parse::<f64>().unwrap() >= 0.0));
    let doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("gaps.json")).unwrap()).unwrap();
    assert_eq!(doc["config"]["l"], 1);
    assert_eq!(doc["reports"].as_array().unwrap().len(), 8);
}

#[test]
fn verify_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["verify", "--corpus", "count=3", "--seed", "11", "--N", "128"];
    assert_eq!(run(&args, &dir.path().join("a")), 0);
    assert_eq!(run(&args, &dir.path().join("b")), 0);
    for file in ["gaps.csv", "verify_errors.json"] {
        let a = std::fs::read(dir.path().join("a").join(file)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(file)).unwrap();
        assert_eq!(a, b, "{file} differs");
    }
    // another seed gives another corpus
    assert_eq!(run(&["verify", "--corpus", "count=3", "--seed", "12", "--N", "128"], &dir.path().join("c")), 0);
    assert_ne!(std::fs::read(dir.path().join("a/gaps.csv")).unwrap(), std::fs::read(dir.path().join("c/gaps.csv")).unwrap());
}

#[test]
fn convergence_reports_scheme_order() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    assert_eq!(run(&["convergence", "--check", "minkowski", "--N", "32,64,128", "--shapes", "2"], out), 0);
    let ratios: Vec<f64> = column(&out.join("convergence.csv"), "ratio").iter().filter(|r| !r.is_empty()).map(|r| r.parse().unwrap()).collect();
    assert_eq!(ratios.len(), 4);
    assert!(ratios.iter().all(|&r| r >= 3.5), "{ratios:?}");
}

#[test]
fn stored_corpus_and_shape_files_are_reused() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    assert_eq!(run(&["corpus", "--corpus", "count=3", "--N", "64"], out), 0);
    let corpus_dir = out.join("corpus");
    assert!(corpus_dir.join("corpus.json").is_file());
    let from_disk = out.join("from-disk");
    assert_eq!(run(&["verify", "--corpus", corpus_dir.to_str().unwrap()], &from_disk), 0);
    let shapes = column(&from_disk.join("gaps.csv"), "shape");
    assert!(shapes.contains(&"shape-000".to_string()) && shapes.contains(&"shape-002".to_string()));
    let sim = out.join("sim");
    let file = corpus_dir.join("shape-001.json");
    assert_eq!(run(&["simulate", "--k", "1", "--shape", file.to_str().unwrap()], &sim), 0);
    assert_eq!(column(&sim.join("simulate.csv"), "run"), ["shape-001"]);
}

#[test]
fn config_file_sets_fields() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sphere.toml");
    std::fs::write(&cfg, "epsilon = 1\nk = 1\nweights = [\"pow:2\"]\n[corpus]\ncount = 2\nr0 = 0.8\n").unwrap();
    let out = dir.path().join("out");
    assert_eq!(run(&["verify", "--config", cfg.to_str().unwrap(), "--N", "128"], &out), 0);
    assert_eq!(column(&out.join("gaps.csv"), "inequality"), ["spherical-minkowski", "spherical-minkowski"]);
    let resolved: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("config.json")).unwrap()).unwrap();
    assert_eq!(resolved["epsilon"], 1);
    assert_eq!(resolved["corpus"]["r0"], 0.8);
}

#[test]
fn report_summarizes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    assert_eq!(run(&["verify", "--corpus", "count=2", "--N", "128"], out), 0);
    assert_eq!(run(&["convergence", "--check", "hessian", "--N", "32,64", "--shapes", "1"], out), 0);
    assert_eq!(run_from(["spaceflow", "report", "--out", out.to_str().unwrap()]), 0);
    let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["passed"], true);
    let metrics = column(&out.join("summary.csv"), "metric");
    assert!(metrics.contains(&"failed_reports".to_string()) && metrics.contains(&"min_finest_ratio".to_string()));
}

#[test]
fn failures_exit_nonzero_with_json_record() {
    let bin = env!("CARGO_BIN_EXE_spaceflow");
    let dir = tempfile::tempdir().unwrap();
    let cases: [&[&str]; 4] = [
        &["verify", "--eps", "7"],
        &["verify", "--eps", "-1", "--thm", "spherical-minkowski"],
        &["simulate", "--shape", "sphere:abc"],
        &["verify", "--weight", "nonexistent-weight"],
    ];
    for args in cases {
        let output = Command::new(bin).args(args).arg("--out").arg(dir.path()).output().unwrap();
        assert_eq!(output.status.code(), Some(2), "{args:?}");
        let stderr = String::from_utf8(output.stderr).unwrap();
        let record: serde_json::Value = serde_json::from_str(stderr.lines().last().unwrap()).unwrap();
        assert!(record["error"].is_string() && record["message"].is_string(), "{stderr}");
    }
    let bad_cfg = dir.path().join("bad.toml");
    std::fs::write(&bad_cfg, "epsilom = 1\n").unwrap();
    let output = Command::new(bin).args(["verify", "--config", bad_cfg.to_str().unwrap()]).output().unwrap();
    assert_eq!(output.status.code(), Some(2));
    // a flow started outside its hypothesis is a per-run failure
    let output = Command::new(bin)
        .args(["simulate", "--eps", "1", "--k", "1", "--shape", "sphere:1.6", "--out"])
        .arg(dir.path().join("hemisphere"))
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(1));
    let stderr = String::from_utf8(output.stderr).unwrap();
    assert!(stderr.contains("\"error\":\"hypothesis\""), "{stderr}");
}
