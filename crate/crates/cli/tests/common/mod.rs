#![allow(dead_code)]

use std::fs;
use std::path::Path;

use hte_core::data::{ColumnData, TrialDataset};
use hte_core::simbench::{simulate_replicate, CovariateModel, ScenarioSpec};

/// Writes a dataset as CSV plus a matching schema document.
pub fn write_dataset(data: &TrialDataset, dir: &Path) -> (std::path::PathBuf, std::path::PathBuf) {
    fs::create_dir_all(dir).unwrap();
    let x = &data.covariates;
    let mut text = String::from("id,y,a");
    for c in x.columns() {
        text.push(',');
        text.push_str(&c.name);
    }
    text.push('\n');
    for i in 0..data.n() {
        text.push_str(&format!("subj{},{},{}", i + 1, data.outcome[i], data.treatment[i]));
        for c in x.columns() {
            match &c.data {
                ColumnData::Numeric(v) => text.push_str(&format!(",{}", v[i])),
                ColumnData::Categorical { codes, levels } => text.push_str(&format!(",{}", levels[codes[i] as usize])),
            }
        }
        text.push('\n');
    }
    let covs: Vec<serde_json::Value> = x
        .columns()
        .iter()
        .map(|c| match &c.data {
            ColumnData::Numeric(_) => serde_json::json!({"name": c.name, "kind": "numeric"}),
            ColumnData::Categorical { levels, .. } => {
                serde_json::json!({"name": c.name, "kind": "categorical", "levels": levels})
            }
        })
        .collect();
    let schema = serde_json::json!({
        "outcome": "y",
        "outcome_kind": "continuous",
        "treatment": "a",
        "id": "id",
        "covariates": covs,
    });
    let data_path = dir.join("data.csv");
    let schema_path = dir.join("schema.json");
    fs::write(&data_path, text).unwrap();
    fs::write(&schema_path, serde_json::to_string_pretty(&schema).unwrap()).unwrap();
    (data_path, schema_path)
}

/// A simulated scenario dataset written to `dir`.
pub fn scenario_dataset(spec: &ScenarioSpec, seed: u64, dir: &Path) -> (std::path::PathBuf, std::path::PathBuf) {
    let (data, _) = simulate_replicate(spec, &CovariateModel::default(), seed, 0).unwrap();
    write_dataset(&data, dir)
}

/// Config with a lasso-only ensemble and small forests, for quick end-to-end runs.
pub const QUICK_CONFIG: &str = r#"{
  "learners": {"members": [{"kind": "penalized_linear"}]},
  "test": {"permutations": 999},
  "ranking": {"ntree": 100}
}"#;
