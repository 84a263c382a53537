mod common;

use std::fs;
use std::path::Path;
use std::process::Command;

use hte_core::simbench::ScenarioSpec;

fn hte() -> Command {
    Command::new(env!("CARGO_BIN_EXE_hte"))
}

fn quick_config(dir: &Path) -> std::path::PathBuf {
    let p = dir.join("config.json");
    fs::write(&p, common::QUICK_CONFIG).unwrap();
    p
}

fn analyze(data: &Path, schema: &Path, config: &Path, out: &Path, extra: &[&str]) -> std::process::Output {
    hte()
        .args(["analyze", "--data"])
        .arg(data)
        .arg("--schema")
        .arg(schema)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(extra)
        .output()
        .unwrap()
}

#[test]
fn analyze_writes_valid_report_and_tables() {
    let dir = tempfile::tempdir().unwrap();
    let spec = ScenarioSpec::new(2, 1.2, 0.2, 1.5, 300).unwrap();
    let (data, schema) = common::scenario_dataset(&spec, 4, dir.path());
    let config = quick_config(dir.path());
    let out = dir.path().join("out");
    let res = analyze(&data, &schema, &config, &out, &["--seed", "9", "--top-k", "3"]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));

    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    let schema_doc: serde_json::Value =
        serde_json::from_str(include_str!("../schema/report.schema.json")).unwrap();
    let validator = jsonschema::validator_for(&schema_doc).unwrap();
    let errors: Vec<String> = validator.iter_errors(&report).map(|e| e.to_string()).collect();
    assert!(errors.is_empty(), "{errors:?}");

    assert_eq!(report["ranking"]["top_k"].as_array().unwrap().len(), 3);
    assert_eq!(report["cate"]["subjects"][0]["id"], "subj1");
    assert_eq!(report["provenance"]["seeds"]["master"], 9);

    let cate = fs::read_to_string(out.join("cate.csv")).unwrap();
    assert_eq!(cate.lines().count(), 301);
    assert!(cate.starts_with("id,tau_hat,pseudo_outcome\n"));
    let ranking = fs::read_to_string(out.join("ranking.csv")).unwrap();
    assert_eq!(ranking.lines().count(), 31);
    let subgroups = fs::read_to_string(out.join("subgroups.csv")).unwrap();
    assert!(subgroups.starts_with(
        "covariate,bin,n,observed_effect,observed_ci_lo,observed_ci_hi,dr_adjusted_effect,overall_ate\n"
    ));
}

#[test]
fn analyze_is_byte_identical_across_runs_and_workers() {
    let dir = tempfile::tempdir().unwrap();
    let spec = ScenarioSpec::new(1, 1.0, 0.3, 0.5, 240).unwrap();
    let (data, schema) = common::scenario_dataset(&spec, 8, dir.path());
    let config = quick_config(dir.path());
    let mut reports = Vec::new();
    for (k, workers) in ["1", "4", "1"].iter().enumerate() {
        let out = dir.path().join(format!("out{k}"));
        let res = analyze(&data, &schema, &config, &out, &["--workers", workers]);
        assert!(res.status.success());
        reports.push(fs::read(out.join("report.json")).unwrap());
    }
    assert_eq!(reports[0], reports[1]);
    assert_eq!(reports[0], reports[2]);
}

#[test]
fn gating_flag_follows_alpha() {
    let dir = tempfile::tempdir().unwrap();
    let spec = ScenarioSpec::new(2, 1.0, 0.0, 0.0, 200).unwrap();
    let (data, schema) = common::scenario_dataset(&spec, 2, dir.path());
    let config = quick_config(dir.path());
    let out = dir.path().join("out");
    let res = analyze(&data, &schema, &config, &out, &["--alpha", "1e-9"]);
    assert!(res.status.success());
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["ranking"]["no_evidence_against_homogeneity"], true);
    assert_eq!(report["global_test"]["conclusion"], "no evidence against homogeneity");
}

#[test]
fn errors_exit_nonzero_with_message() {
    let dir = tempfile::tempdir().unwrap();
    let config = quick_config(dir.path());
    let missing = dir.path().join("missing.csv");
    let res = analyze(&missing, &missing, &config, &dir.path().join("out"), &[]);
    assert!(!res.status.success());
    assert!(String::from_utf8_lossy(&res.stderr).starts_with("error:"));
    assert!(!dir.path().join("out").join("report.json").exists());

    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"tset": {}}"#).unwrap();
    let res = hte().args(["calibrate", "--scenario", "1", "--out"]).arg(dir.path().join("c.json")).arg("--config").arg(&bad).output().unwrap();
    assert!(!res.status.success());
    assert!(String::from_utf8_lossy(&res.stderr).contains("tset"));

    let res = hte().args(["calibrate", "--scenario", "5", "--out", "x.json"]).output().unwrap();
    assert!(!res.status.success());
}

fn calibrate(dir: &Path, name: &str, extra: &[&str]) -> serde_json::Value {
    let config = dir.join("cal_config.json");
    fs::write(&config, r#"{"simbench": {"n": 200, "calibration": {"replicates": 1000}}}"#).unwrap();
    let out = dir.join(name);
    let res = hte()
        .args(["calibrate", "--scenario", "1", "--seed", "5", "--out"])
        .arg(&out)
        .arg("--config")
        .arg(&config)
        .args(extra)
        .output()
        .unwrap();
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    serde_json::from_str(&fs::read_to_string(out).unwrap()).unwrap()
}

#[test]
fn calibrate_record_covers_grid_and_repeats() {
    let dir = tempfile::tempdir().unwrap();
    let a = calibrate(dir.path(), "a.json", &[]);
    let b = calibrate(dir.path(), "b.json", &[]);
    assert_eq!(a, b);
    let star = a["beta1_star"].as_f64().unwrap();
    let grid = a["grid"].as_array().unwrap();
    let betas: Vec<f64> = grid.iter().map(|g| g["beta1"].as_f64().unwrap()).collect();
    for (b, m) in betas.iter().zip([0.0, 0.5, 1.0, 1.5, 2.0]) {
        assert!((b - m * star).abs() < 1e-12);
    }
    assert!(grid.iter().all(|g| g["beta0"].is_number()));
    assert_eq!(a["n"], 200);

    let zero = calibrate(dir.path(), "z.json", &["--target-r2", "0"]);
    assert_eq!(zero["s"], 0.0);
}

#[test]
fn benchmark_writes_directory_and_echoes_config() {
    let dir = tempfile::tempdir().unwrap();
    let input = serde_json::json!({
        "learners": {"members": [{"kind": "penalized_linear"}]},
        "metalearner": {"folds": 3},
        "test": {"permutations": 199},
        "ranking": {"ntree": 20},
        "simbench": {
            "scenarios": [3],
            "multipliers": [0.0, 1.0],
            "replicates": 2,
            "n": 200,
            "methods": ["dr_learner", "univariate", "multivariate"],
            "calibration": {"replicates": 500}
        }
    });
    let config = dir.path().join("bench.json");
    fs::write(&config, input.to_string()).unwrap();
    let run = |out: &Path, workers: &str| {
        let res = hte()
            .args(["benchmark", "--seed", "3", "--workers", workers, "--config"])
            .arg(&config)
            .arg("--out")
            .arg(out)
            .output()
            .unwrap();
        assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    };
    let out1 = dir.path().join("b1");
    let out4 = dir.path().join("b4");
    run(&out1, "1");
    run(&out4, "4");
    for f in ["report.json", "replicates.csv", "config.json"] {
        assert_eq!(fs::read(out1.join(f)).unwrap(), fs::read(out4.join(f)).unwrap(), "{f}");
    }
    let rows = hte_core::simbench::read_replicates(out1.join("replicates.csv")).unwrap();
    assert_eq!(rows.len(), 2 * 2 * 3);

    // the echoed config contains every input value plus resolved defaults
    let echoed: serde_json::Value = serde_json::from_str(&fs::read_to_string(out1.join("config.json")).unwrap()).unwrap();
    let cfg = &echoed["config"];
    assert_eq!(cfg["replicates"], 2);
    assert_eq!(cfg["scenarios"], serde_json::json!([3]));
    assert_eq!(cfg["crossfit"]["folds"], 3);
    assert_eq!(cfg["test"]["permutations"], 199);
    assert_eq!(cfg["ranking"]["ntree"], 20);
    assert_eq!(cfg["alpha"], 0.1);
    assert_eq!(cfg["ranking"]["n_perm_repeats"], 5);
    assert_eq!(echoed["seed"], 3);
    assert!(echoed["calibrations"][0]["beta1_star"].is_number());
}

#[test]
fn readme_config_example_is_accepted() {
    let readme = fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("../../README.md")).unwrap();
    let block = readme
        .split("```json")
        .filter_map(|s| s.split("```").next())
        .find(|s| s.contains("\"learners\""))
        .unwrap();
    let cfg = hte_cli::AppConfig::from_json(block).unwrap();
    assert_eq!(cfg.metalearner.folds, 5);
}
