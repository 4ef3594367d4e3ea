use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use hoif_cre::io::{read_csv, EstimateRow};
use serde_json::Value;

fn hoif(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hoif")).args(args).output().unwrap()
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn close(a: Option<f64>, b: Option<f64>) -> bool {
    match (a, b) {
        (None, None) => true,
        (Some(x), Some(y)) => (x - y).abs() <= 1e-12 * y.abs().max(1.0),
        _ => false,
    }
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn toy_dataset_matches_golden() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("est.csv");
    let o = hoif(&["estimate", "--data", s(&fixture("toy.csv")), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let got: Vec<EstimateRow> = read_csv(&out).unwrap();
    let want: Vec<EstimateRow> = read_csv(&fixture("toy_estimates.csv")).unwrap();
    assert_eq!(got.len(), want.len());
    for (g, w) in got.iter().zip(&want) {
        assert_eq!(g.estimator, w.estimator);
        for (a, b) in [
            (Some(g.estimate), Some(w.estimate)),
            (g.se, w.se),
            (g.ci_lower, w.ci_lower),
            (g.ci_upper, w.ci_upper),
            (g.se_conservative, w.se_conservative),
            (g.ci_lower_conservative, w.ci_lower_conservative),
            (g.ci_upper_conservative, w.ci_upper_conservative),
        ] {
            assert!(close(a, b), "{}: {a:?} vs {b:?}", g.estimator);
        }
    }
    assert!(String::from_utf8_lossy(&o.stderr).contains("clamped"));
}

#[test]
fn output_round_trips_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("est.csv");
    hoif(&["estimate", "--data", s(&fixture("toy.csv")), "--out", s(&out)]);
    let rows: Vec<EstimateRow> = read_csv(&out).unwrap();
    let again = dir.path().join("again.csv");
    hoif_cre::io::write_csv(&again, &rows).unwrap();
    assert_eq!(std::fs::read(&out).unwrap(), std::fs::read(&again).unwrap());
    let reread: Vec<EstimateRow> = read_csv(&again).unwrap();
    assert_eq!(rows, reread);
}

#[test]
fn no_covariates_gives_unadjusted() {
    let dir = tempfile::tempdir().unwrap();
    let data = write(dir.path(), "d.csv", "y,t\n1,1\n4,0\n2,1\n7,0\n3,1\n0,0\n");
    let out = dir.path().join("e.csv");
    let o = hoif(&[
        "estimate", "--data", s(&data), "--estimators", "unadj,adj,adj1,adj2,adj2dagger,db,adj3",
        "--out", s(&out),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let rows: Vec<EstimateRow> = read_csv(&out).unwrap();
    assert_eq!(rows.len(), 7);
    for r in &rows {
        assert!((r.estimate - 2.0).abs() < 1e-14, "{}", r.estimator);
    }
}

#[test]
fn constant_outcomes_are_recovered() {
    let dir = tempfile::tempdir().unwrap();
    let text = "y,t,x1\n5,1,0.3\n5,0,1.2\n5,1,-0.4\n5,0,2.0\n5,1,0.9\n5,0,-1.1\n5,1,0.0\n";
    let data = write(dir.path(), "d.csv", text);
    let out = dir.path().join("e.csv");
    let o = hoif(&["estimate", "--data", s(&data), "--estimators", "adj2dagger,db,adj", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(0));
    for r in read_csv::<EstimateRow>(&out).unwrap() {
        assert!((r.estimate - 5.0).abs() < 1e-13, "{}", r.estimator);
    }
}

#[test]
fn input_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("e.csv");
    let bad_t = write(dir.path(), "t.csv", "y,t,x1\n1,1,0\n2,2,1\n3,0,2\n");
    let o = hoif(&["estimate", "--data", s(&bad_t), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 3"));

    let missing = write(dir.path(), "m.csv", "y,t,x1\n1,1,0\n2,0,\n3,0,2\n");
    let o = hoif(&["estimate", "--data", s(&missing), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));

    let o = hoif(&["estimate", "--data", s(&fixture("toy.csv")), "--n1", "3", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    let o = hoif(&["estimate", "--data", s(&fixture("toy.csv")), "--design", "bernoulli", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    let o = hoif(&["estimate", "--data", s(&fixture("toy.csv")), "--estimators", "ols", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    let o = hoif(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn bernoulli_design_runs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("e.csv");
    let o = hoif(&[
        "estimate", "--data", s(&fixture("toy.csv")), "--design", "bernoulli", "--pi1", "0.5",
        "--varest", "unbiased", "--out", s(&out),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let rows: Vec<EstimateRow> = read_csv(&out).unwrap();
    assert!(rows.iter().all(|r| r.se_conservative.is_none()));
}

#[test]
fn enum_check_contract() {
    let o = hoif(&["enum-check", "--n", "8", "--n1", "4", "--p", "2", "--reps", "20"]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8_lossy(&o.stdout).to_string();
    assert_eq!(text.lines().filter(|l| l.ends_with(" ok")).count(), 6, "{text}");

    let o = hoif(&["enum-check", "--n", "4", "--n1", "2", "--p", "1"]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8_lossy(&o.stdout).to_string();
    let line = text.lines().find(|l| l.starts_with("bias_adj2")).unwrap();
    let err: f64 = line.split_whitespace().nth(1).unwrap().parse().unwrap();
    assert!(err < 1e-12);

    let o = hoif(&["enum-check", "--n", "4", "--n1", "5", "--p", "1"]);
    assert_eq!(o.status.code(), Some(2));
    let o = hoif(&["enum-check", "--n", "40", "--n1", "20", "--p", "1"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn moments_table() {
    let dir = tempfile::tempdir().unwrap();
    let pop = write(dir.path(), "p.csv", "y1,x1\n2,1\n2,2\n2,3\n2,4\n");
    let out = dir.path().join("m.csv");
    let o = hoif(&["moments", "--population", s(&pop), "--n1", "2", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&out).unwrap();
    let line = text.lines().find(|l| l.starts_with("adj2,exact,bias,")).unwrap();
    let v: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
    assert!((v + 1.0 / 6.0).abs() < 1e-15);
}

fn manifest(out: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(out.with_extension("manifest.json")).unwrap()).unwrap()
}

#[test]
fn mc_sim_smoke() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", r#"{"dgp": {"n": 80}, "replicates": 200, "seed": 3}"#);
    let out = dir.path().join("mc.csv");
    let o = hoif(&["--threads", "1", "mc-sim", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&out).unwrap();
    let mut seen = 0;
    for line in text.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        if f[9] == "coverage" {
            let v: f64 = f[10].parse().unwrap();
            assert!((0.0..=1.0).contains(&v));
            seen += 1;
        }
    }
    assert!(seen > 0);
    let m = manifest(&out);
    assert_eq!(m["seed"], 3);
    assert_eq!(m["config"]["replicates"], 200);
    assert_eq!(m["config_digest"].as_str().unwrap().len(), 64);
    let files: Vec<_> = std::fs::read_dir(dir.path()).unwrap().collect();
    assert_eq!(files.len(), 3);
}

#[test]
fn bad_config_lists_pointers() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", r#"{"dgp": {"alpha": 1.5}, "level": 2}"#);
    let out = dir.path().join("mc.csv");
    let o = hoif(&["mc-sim", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("/dgp/alpha") && err.contains("/level"), "{err}");
    assert!(!out.exists());
}

#[test]
fn oracle_sim_rows_per_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "g.json",
        r#"{"pool_size": 200, "n": [50, 100], "alpha": [0.05, 0.1, 0.2]}"#,
    );
    let out = dir.path().join("o.csv");
    let o = hoif(&["oracle-sim", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "n,alpha,p,model,error,gamma,pi1,estimator,metric,value");
    let keys: std::collections::HashSet<String> = lines
        .map(|l| l.rsplit_once(',').unwrap().0.to_string())
        .collect();
    // 2 n × 3 α × 2 models × 2 errors, 7 (estimator, metric) pairs each.
    assert_eq!(keys.len(), 2 * 3 * 2 * 2 * 7);
    assert_eq!(manifest(&out)["rows"], 168);
}

#[test]
fn adversarial_manifest_records_outcome() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("adv.csv");
    let o = hoif(&["adversarial", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let m = manifest(&out);
    assert_eq!(m["feasible"], true);
    let obj = m["objective"].as_f64().unwrap();
    assert!(obj > 0.0);
    assert!(m["nu_f"].as_f64().unwrap() < m["nu_f_dagger"].as_f64().unwrap());
    assert!(m["nu_f"].as_f64().unwrap() < m["var_unadj"].as_f64().unwrap());
    let text = std::fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().count(), 51);
    assert!(m["timestamp"].as_str().unwrap().ends_with('Z'));
}
