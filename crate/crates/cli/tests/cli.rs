use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn pedcross(args: &[&str], out_root: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pedcross"))
        .args(args)
        .env("PEDCROSS_OUT", out_root)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "status {:?}\nstdout {}\nstderr {}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn train_small(root: &Path, variant: &str, dir: &str) -> PathBuf {
    let out = root.join(dir);
    let o = pedcross(
        &[
            "train", "--variant", variant, "--steps", "512", "--n-envs", "2", "--rollout-len", "128", "--seed", "3",
            "--out", out.to_str().unwrap(),
        ],
        root,
    );
    ok(&o);
    out.join("policy.ckpt")
}

fn csv_rows(path: &Path) -> Vec<csv::StringRecord> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records().map(|x| x.unwrap()).collect()
}

fn column(path: &Path, name: &str) -> Vec<String> {
    let mut r = csv::Reader::from_path(path).unwrap();
    let idx = r.headers().unwrap().iter().position(|h| h == name).unwrap();
    r.records().map(|x| x.unwrap()[idx].to_string()).collect()
}

#[test]
fn help_and_usage_errors() {
    let root = tempfile::tempdir().unwrap();
    assert_eq!(pedcross(&["--help"], root.path()).status.code(), Some(0));
    assert_eq!(pedcross(&["train", "--variant", "X"], root.path()).status.code(), Some(2));
    assert_eq!(pedcross(&["frobnicate"], root.path()).status.code(), Some(2));
    assert_eq!(pedcross(&["simulate", "--params", "1,2,3"], root.path()).status.code(), Some(2));
    assert_eq!(pedcross(&["compare-variants"], root.path()).status.code(), Some(2));
}

#[test]
fn missing_inputs_exit_3() {
    let root = tempfile::tempdir().unwrap();
    let o = pedcross(&["simulate", "--checkpoint", "/nonexistent/policy.ckpt"], root.path());
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("checkpoint"));
    // default checkpoint location under an empty output root
    assert_eq!(pedcross(&["simulate"], root.path()).status.code(), Some(3));
    assert_eq!(pedcross(&["report"], root.path()).status.code(), Some(3));
    assert_eq!(pedcross(&["train", "--config", "/nonexistent.json"], root.path()).status.code(), Some(3));
}

#[test]
fn bad_config_is_usage_error() {
    let root = tempfile::tempdir().unwrap();
    let cfg = root.path().join("c.json");
    std::fs::write(&cfg, r#"{"variant": "SM", "stepz": 5}"#).unwrap();
    let o = pedcross(&["train", "--config", cfg.to_str().unwrap()], root.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn train_simulate_report_pipeline() {
    let root = tempfile::tempdir().unwrap();
    let r = root.path();
    // default locations chain train -> simulate -> report
    let o = pedcross(&["train", "--steps", "512", "--n-envs", "2", "--rollout-len", "128", "--seed", "9"], r);
    ok(&o);
    let train_dir = r.join("train");
    for f in ["policy.ckpt", "learning_curve.csv", "manifest.json"] {
        assert!(train_dir.join(f).is_file(), "{f} missing");
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(train_dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 9);
    assert_eq!(manifest["command"], "train");
    assert_eq!(csv_rows(&train_dir.join("learning_curve.csv")).len(), 2);

    ok(&pedcross(&["simulate", "--reps", "3", "--seed", "4"], r));
    let sim = r.join("simulate");
    assert_eq!(csv_rows(&sim.join("episodes.csv")).len(), 8 * 2 * 3);
    for col in ["g", "e"] {
        for v in column(&sim.join("metrics.csv"), col) {
            if !v.is_empty() {
                let x: f64 = v.parse().unwrap();
                assert!((0.0..=1.0).contains(&x));
            }
        }
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(sim.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 4);
    assert!(manifest["inputs"]["checkpoint"]["sha256"].as_str().unwrap().len() == 64);

    ok(&pedcross(&["report"], r));
    let rep = r.join("report");
    let checks: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(rep.join("checklist.json")).unwrap()).unwrap();
    assert_eq!(checks.as_array().unwrap().len(), 10);
    assert!(rep.join("checklist.txt").is_file());
    assert!(rep.join("cit_distribution.csv").is_file());
    assert_eq!(csv_rows(&rep.join("roughness.csv")).len(), 1);
    assert_eq!(csv_rows(&rep.join("conditions.csv")).len(), 16);
    for entry in std::fs::read_dir(rep.join("speed_profiles")).unwrap() {
        let path = entry.unwrap().path();
        let mut rdr = csv::Reader::from_path(&path).unwrap();
        let h = rdr.headers().unwrap().clone();
        assert_eq!(&h[0], "position_bin");
        assert_eq!(&h[1], "mean_speed");
        assert!(h.iter().skip(3).all(|c| c.starts_with("episode_")));
    }
}

#[test]
fn calibrate_small_budget() {
    let root = tempfile::tempdir().unwrap();
    let ck = train_small(root.path(), "SM", "t");
    let out = root.path().join("cal");
    let o = pedcross(
        &[
            "calibrate", "--checkpoint", ck.to_str().unwrap(), "--budget", "5", "--init-points", "3", "--reps", "1",
            "--truth", "2,4,1,1,1", "--out", out.to_str().unwrap(),
        ],
        root.path(),
    );
    ok(&o);
    assert_eq!(csv_rows(&out.join("trace.csv")).len(), 5);
    assert!(out.join("observed.csv").is_file());
    let best: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("best.json")).unwrap()).unwrap();
    let p = pedcross::NonPolicyParams::from_array([
        best["params"]["sigma_v_day"].as_f64().unwrap(),
        best["params"]["sigma_v_night"].as_f64().unwrap(),
        best["params"]["time_pressure_gain"].as_f64().unwrap(),
        best["params"]["effort_weight"].as_f64().unwrap(),
        best["params"]["looming_weight"].as_f64().unwrap(),
    ]);
    p.validate().unwrap();
    assert!(best["truth_discrepancy"].as_f64().is_some());
    let best_col: Vec<f64> = column(&out.join("trace.csv"), "best_so_far").iter().map(|s| s.parse().unwrap()).collect();
    assert!(best_col.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn compare_variants_reports_roughness() {
    let root = tempfile::tempdir().unwrap();
    let a = train_small(root.path(), "SM", "a");
    let b = train_small(root.path(), "S", "b");
    let out = root.path().join("cmp");
    ok(&pedcross(
        &[
            "compare-variants", "--checkpoint", a.to_str().unwrap(), "--checkpoint", b.to_str().unwrap(), "--reps", "2",
            "--out", out.to_str().unwrap(),
        ],
        root.path(),
    ));
    let variants = column(&out.join("roughness.csv"), "variant");
    assert_eq!(variants, vec!["SM", "S"]);
    assert!(out.join("effect_sizes.csv").is_file());
}
