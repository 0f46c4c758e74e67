use std::fs;

use fairthresh::par::Exec;
use fairthresh::policy::{evaluate, solve_fair, solve_mu, Criterion};
use fairthresh::scenario::{emit_outputs, run_scenario, run_scenario_with, RunOptions, Scenario};

const SYNTHETIC: &str = r#"
specs = ["DP", "TPR", "FPR", "EO"]
[population]
source = "synthetic"
[bias]
family = "underestimate_b"
betas = [1.0, 0.8, 0.6]
[outputs]
contour = 40
sensitivity = true
"#;

fn read_all(dir: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    files.sort();
    files
        .into_iter()
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&p).unwrap(),
            )
        })
        .collect()
}

#[test]
fn reruns_are_byte_identical() {
    let s = Scenario::from_toml(SYNTHETIC).unwrap();
    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let r1 = run_scenario(&s).unwrap();
    emit_outputs(&s, &r1, d1.path(), Exec::Auto).unwrap();
    let r2 = run_scenario_with(
        &s,
        RunOptions {
            exec: Exec::Sequential,
            ..Default::default()
        },
    )
    .unwrap();
    emit_outputs(&s, &r2, d2.path(), Exec::Sequential).unwrap();
    let (f1, f2) = (read_all(d1.path()), read_all(d2.path()));
    let names: Vec<&str> = f1.iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(
        names,
        [
            "contour.csv",
            "contour_dp.csv",
            "contour_fpr.csv",
            "contour_tpr.csv",
            "results.csv",
            "sensitivity.csv"
        ]
    );
    assert_eq!(f1, f2);
}

#[test]
fn results_rows_are_ordered_by_spec_then_beta() {
    let s = Scenario::from_toml(SYNTHETIC).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let sr = run_scenario(&s).unwrap();
    emit_outputs(&s, &sr, dir.path(), Exec::Auto).unwrap();
    let text = fs::read_to_string(dir.path().join("results.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "spec,beta,theta_a,theta_b,sel_a,sel_b,gap_dp,gap_tpr,gap_fpr,util_a,util_b,util_total,solver,residual"
    );
    let keys: Vec<(String, String)> = lines
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[0].to_string(), f[1].to_string())
        })
        .collect();
    let mut expected = Vec::new();
    for spec in ["MU", "DP", "TPR", "FPR", "EO"] {
        for beta in ["1", "0.8", "0.6"] {
            expected.push((spec.to_string(), beta.to_string()));
        }
    }
    assert_eq!(keys, expected);
}

#[test]
fn training_never_sees_the_truth() {
    // thresholds in the sweep equal a direct solve on the biased population
    let s = Scenario::from_toml(SYNTHETIC).unwrap();
    let sr = run_scenario(&s).unwrap();
    let truth = s.population().unwrap();
    for row in &sr.rows {
        let biased = fairthresh::bias::apply(&truth, &s.bias.spec_at(row.beta))
            .unwrap()
            .biased;
        let o = row.outcome.as_ref().unwrap();
        let direct = if row.spec.criterion == Criterion::Mu {
            solve_mu(&biased)
        } else {
            solve_fair(&biased, row.spec).unwrap()
        };
        assert_eq!(o.trained.theta, direct.theta);
        assert_eq!(o.truth, evaluate(&truth, direct.theta));
        assert_eq!(o.biased, evaluate(&biased, direct.theta));
    }
}

#[test]
fn profile_table_paths_resolve_against_the_scenario_file() {
    let dir = tempfile::tempdir().unwrap();
    let data = concat!(env!("CARGO_MANIFEST_DIR"), "/data");
    for ext in ["csv", "meta"] {
        fs::copy(
            format!("{data}/fico_sample.{ext}"),
            dir.path().join(format!("fico.{ext}")),
        )
        .unwrap();
    }
    let path = dir.path().join("scenario.toml");
    fs::write(
        &path,
        "specs = [\"TPR\"]\n[population]\nsource = \"profile_table\"\npath = \"fico.csv\"\n[bias]\nfamily = \"underestimate_b\"\nbetas = [1.0]\n",
    )
    .unwrap();
    let s = Scenario::load(&path).unwrap();
    s.validate().unwrap();
    let pop = s.population().unwrap();
    assert_eq!(pop.u_minus(), 10.0);
    assert!((pop.b().alpha() - 0.34).abs() < 1e-3);
}

#[test]
fn scenario_loss_ratio_overrides_table_metadata() {
    let s = Scenario::from_toml(&format!(
        "u_minus_over_u_plus = 4.0\n[population]\nsource = \"profile_table\"\npath = \"{}/data/fico_sample.csv\"\n[bias]\nfamily = \"underestimate_b\"\n",
        env!("CARGO_MANIFEST_DIR")
    ))
    .unwrap();
    assert_eq!(s.population().unwrap().u_minus(), 4.0);
}

#[test]
fn unknown_keys_are_rejected() {
    let err = Scenario::from_toml(
        "[population]\nsource = \"synthetic\"\nalpha_c = 0.3\n[bias]\nfamily = \"underestimate_b\"\n",
    );
    assert!(err.is_err());
}
