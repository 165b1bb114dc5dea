use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_acrl");

const TABULAR: &str = r#"
schema_version = 1
kind = "tabular-acrl"
seeds = [0, 1, 2]
output_dir = "tabular"

[environment]
type = "monitoring"
thresholds = [0.3333333333333333, 0.3333333333333333]

[executor]
eta_lambda = 0.5
t0 = 10
epochs = 1000
record_steps = true
"#;

const CONTINUOUS: &str = r#"
schema_version = 1
kind = "continuous-acrl"
seeds = [5, 6]
output_dir = "continuous"

[environment]
type = "continuous"
thresholds = [0.20, 0.15, 0.10, 0.05]

[trainer]
iterations = 300
horizon = 20
step_size = 0.001
batch_size = 10
lambda_max = 3.0
baseline = "offset-batch-mean"
log_every = 100
spatial_centers = 3
lambda_centers = 2
bandwidth_factor = 0.6
sigma = 0.5

[executor]
eta_lambda = 0.01
t0 = 1
epochs = 300
record_steps = true
occupancy_resolution = 10

[probe]
lambda = [5.0, 0.0, 0.0, 0.0]
region = 1
resolution = 10
min_fraction = 0.0
"#;

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn acrl(args: &[&str], root: &Path) -> Output {
    Command::new(BIN).args(args).env("ACRL_OUTPUT_ROOT", root).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn csv_files(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let p = entry.unwrap().path();
        if p.is_dir() {
            out.extend(csv_files(&p));
        } else if p.extension().is_some_and(|e| e == "csv") {
            out.push(p);
        }
    }
    out.sort();
    out
}

fn assert_identical_csvs(a: &Path, b: &Path) {
    let fa = csv_files(a);
    let fb = csv_files(b);
    assert!(!fa.is_empty());
    assert_eq!(fa.len(), fb.len());
    for (x, y) in fa.iter().zip(&fb) {
        assert_eq!(x.strip_prefix(a).unwrap(), y.strip_prefix(b).unwrap());
        assert!(std::fs::read(x).unwrap() == std::fs::read(y).unwrap(), "{} differs", x.display());
    }
}

#[test]
fn tabular_run_writes_artifacts_and_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "t.toml", TABULAR);
    let out = acrl(&["run", cfg.to_str().unwrap()], tmp.path());
    assert!(out.status.success(), "{}", stderr(&out));
    let dir = tmp.path().join("tabular");
    for f in ["manifest.txt", "summary.txt", "config.toml", "seed-0/dual_trace.csv", "seed-2/execution.csv"] {
        assert!(dir.join(f).exists(), "missing {f}");
    }
    let summary = std::fs::read_to_string(dir.join("summary.txt")).unwrap();
    assert!(summary.contains("check seed-1.feasibility = PASS"));
    assert!(summary.contains("check seed-1.optimality = PASS"));
    assert!(summary.ends_with("overall = PASS\n"));
    let manifest = std::fs::read_to_string(dir.join("manifest.txt")).unwrap();
    assert!(manifest.contains("kind = tabular-acrl"));
    assert!(manifest.contains("seeds = 0,1,2"));
    assert!(manifest.contains("library_version = "));
}

#[test]
fn same_config_twice_gives_identical_csvs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "t.toml", TABULAR);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for (dir, threads) in [(&a, "1"), (&b, "3")] {
        let out = acrl(&["run", cfg.to_str().unwrap(), "--output-dir", dir.to_str().unwrap(), "--threads", threads], tmp.path());
        assert!(out.status.success(), "{}", stderr(&out));
    }
    assert_identical_csvs(&a, &b);
    assert_eq!(
        std::fs::read(a.join("manifest.txt")).unwrap(),
        std::fs::read(b.join("manifest.txt")).unwrap()
    );
}

#[test]
fn continuous_run_is_deterministic_and_draws_heatmaps() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", CONTINUOUS);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for (dir, threads) in [(&a, "1"), (&b, "2")] {
        let out = acrl(&["run", cfg.to_str().unwrap(), "--output-dir", dir.to_str().unwrap(), "--threads", threads], tmp.path());
        // short training is not expected to satisfy the constraints
        assert!(matches!(out.status.code(), Some(0 | 1)), "{}", stderr(&out));
    }
    assert_identical_csvs(&a, &b);
    let svg = std::fs::read_to_string(a.join("occupancy_mean.svg")).unwrap();
    assert!(svg.starts_with("<?xml"));
    assert_eq!(svg.matches("stroke=\"rgb(200,30,30)\"").count(), 4);
    assert!(a.join("seed-5/policy.ckpt").exists());
    assert!(a.join("seed-6/learning_curve.csv").exists());
}

#[test]
fn missing_thresholds_is_a_validation_error() {
    let tmp = tempfile::tempdir().unwrap();
    let text = TABULAR.replace("thresholds = [0.3333333333333333, 0.3333333333333333]\n", "");
    let cfg = write_config(tmp.path(), "t.toml", &text);
    let out = acrl(&["validate", cfg.to_str().unwrap()], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("thresholds"), "{}", stderr(&out));
}

#[test]
fn oversubscribed_thresholds_are_rejected_before_compute() {
    let tmp = tempfile::tempdir().unwrap();
    let text = CONTINUOUS.replace("[0.20, 0.15, 0.10, 0.05]", "[0.40, 0.30, 0.20, 0.20]");
    let cfg = write_config(tmp.path(), "c.toml", &text);
    let out = acrl(&["run", cfg.to_str().unwrap()], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("sum"), "{}", stderr(&out));
    assert!(!tmp.path().join("continuous").exists());
}

#[test]
fn unknown_kind_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "t.toml", &TABULAR.replace("tabular-acrl", "bandit"));
    let out = acrl(&["validate", cfg.to_str().unwrap()], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("bandit"), "{}", stderr(&out));
}

#[test]
fn failed_hard_check_gives_nonzero_exit() {
    let tmp = tempfile::tempdir().unwrap();
    // one step cannot visit both monitored states
    let text = TABULAR.replace("t0 = 10", "t0 = 1").replace("epochs = 1000", "epochs = 1");
    let cfg = write_config(tmp.path(), "t.toml", &text);
    let out = acrl(&["run", cfg.to_str().unwrap()], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    let summary = std::fs::read_to_string(tmp.path().join("tabular/summary.txt")).unwrap();
    assert!(summary.contains("feasibility = FAIL"));
    assert!(summary.ends_with("overall = FAIL\n"));
}

#[test]
fn report_detects_modified_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "t.toml", TABULAR);
    assert!(acrl(&["run", cfg.to_str().unwrap()], tmp.path()).status.success());
    let dir = tmp.path().join("tabular");
    let ok = acrl(&["report", dir.to_str().unwrap()], tmp.path());
    assert!(ok.status.success());
    assert!(String::from_utf8_lossy(&ok.stdout).contains("artifacts verified: 7/7"));

    std::fs::write(dir.join("seed-1/dual_trace.csv"), "tampered\n").unwrap();
    let bad = acrl(&["report", dir.to_str().unwrap()], tmp.path());
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stdout).contains("modified or missing: seed-1/dual_trace.csv"));
}

#[test]
fn certify_prints_the_certificates() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "t.toml", TABULAR);
    let out = acrl(&["certify", cfg.to_str().unwrap(), "--grid-step", "0.25", "--refine-step", "0.01"], tmp.path());
    assert!(out.status.success(), "{}", stderr(&out));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("check strong_duality = PASS"));
    assert!(text.contains("strict: yes"));
}

#[test]
fn every_example_config_validates() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let p = entry.unwrap().path();
        if p.extension().is_some_and(|e| e == "toml") {
            let out = acrl(&["validate", p.to_str().unwrap()], Path::new("/tmp"));
            assert!(out.status.success(), "{}: {}", p.display(), stderr(&out));
            n += 1;
        }
    }
    assert_eq!(n, 6);
}
