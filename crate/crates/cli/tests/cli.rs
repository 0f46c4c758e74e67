use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fairthresh"))
}

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("scenarios")
        .join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

#[test]
fn run_writes_results_and_requested_outputs() {
    let out = tempfile::tempdir().unwrap();
    let s = scenario("synthetic_underestimate.toml");
    let o = run(&[
        "run",
        s.to_str().unwrap(),
        "--out-dir",
        out.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in [
        "results.csv",
        "contour.csv",
        "contour_dp.csv",
        "sensitivity.csv",
    ] {
        assert!(out.path().join(f).exists(), "{f} missing");
    }
    let results = fs::read_to_string(out.path().join("results.csv")).unwrap();
    // header plus 5 specs × 6 levels
    assert_eq!(results.lines().count(), 31);
}

#[test]
fn reruns_are_byte_identical() {
    let s = scenario("fico_underestimate.toml");
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        let o = run(&[
            "run",
            s.to_str().unwrap(),
            "--out-dir",
            d.path().to_str().unwrap(),
            "--seed",
            "7",
        ]);
        assert!(o.status.success());
    }
    let read = |d: &tempfile::TempDir| fs::read(d.path().join("results.csv")).unwrap();
    assert_eq!(read(&dirs[0]), read(&dirs[1]));
}

#[test]
fn sequential_flag_gives_identical_output() {
    let s = scenario("synthetic_overestimate.toml");
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    assert!(run(&[
        "run",
        s.to_str().unwrap(),
        "--out-dir",
        a.path().to_str().unwrap()
    ])
    .status
    .success());
    assert!(run(&[
        "run",
        s.to_str().unwrap(),
        "--out-dir",
        b.path().to_str().unwrap(),
        "--sequential"
    ])
    .status
    .success());
    assert_eq!(
        fs::read(a.path().join("results.csv")).unwrap(),
        fs::read(b.path().join("results.csv")).unwrap()
    );
}

#[test]
fn oracle_flag_adds_cross_check_columns() {
    let out = tempfile::tempdir().unwrap();
    let s = scenario("synthetic_overestimate.toml");
    let o = run(&[
        "run",
        s.to_str().unwrap(),
        "--out-dir",
        out.path().to_str().unwrap(),
        "--oracle",
        "--grid-step",
        "0.5",
    ]);
    assert!(o.status.success());
    let text = fs::read_to_string(out.path().join("results.csv")).unwrap();
    assert!(text
        .lines()
        .next()
        .unwrap()
        .ends_with(",oracle_theta_a,oracle_theta_b"));
}

#[test]
fn contour_and_sensitivity_verbs() {
    let out = tempfile::tempdir().unwrap();
    let s = scenario("synthetic_feature_shift.toml");
    let dir = out.path().to_str().unwrap();
    let o = run(&[
        "contour",
        s.to_str().unwrap(),
        "--out-dir",
        dir,
        "--cells",
        "20",
    ]);
    assert!(o.status.success());
    let contour = fs::read_to_string(out.path().join("contour.csv")).unwrap();
    assert_eq!(contour.lines().count(), 1 + 21 * 21);
    let o = run(&["sensitivity", s.to_str().unwrap(), "--out-dir", dir]);
    assert!(o.status.success());
    let sens = fs::read_to_string(out.path().join("sensitivity.csv")).unwrap();
    // label DP/TPR plus feature TPR/FPR, two groups each
    assert_eq!(sens.lines().count(), 1 + 8);
}

#[test]
fn validate_reports_the_population() {
    let o = run(&[
        "validate",
        scenario("fico_underestimate.toml").to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(
        text.contains("group b: n = 0.1200, alpha = 0.3400"),
        "{text}"
    );
}

#[test]
fn invalid_scenarios_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(
        dir.path(),
        "bad.toml",
        "[population]\nsource = \"synthetic\"\n[bias]\nfamily = \"underestimate_b\"\nbetas = [1.5]\n",
    );
    let o = run(&["validate", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("ValidationError"));

    let garbled = write(dir.path(), "garbled.toml", "population = [\n");
    assert_eq!(
        run(&["run", garbled.to_str().unwrap()]).status.code(),
        Some(2)
    );
}

#[test]
fn missing_files_exit_with_4() {
    let o = run(&["run", "/nonexistent/scenario.toml"]);
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn unwritable_output_exits_with_4() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = write(dir.path(), "file", "");
    let s = scenario("synthetic_overestimate.toml");
    let o = run(&[
        "run",
        s.to_str().unwrap(),
        "--out-dir",
        blocker.join("sub").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn all_cells_failing_exits_with_3() {
    // two training records cannot populate every (group, label) histogram
    let dir = tempfile::tempdir().unwrap();
    let s = write(
        dir.path(),
        "tiny.toml",
        "sample = 2\n[population]\nsource = \"synthetic\"\n[bias]\nfamily = \"underestimate_b\"\nbetas = [1.0, 0.9]\n",
    );
    let o = run(&[
        "run",
        s.to_str().unwrap(),
        "--out-dir",
        dir.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(3));
}
