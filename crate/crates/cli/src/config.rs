//! The JSON configuration document and its resolution against defaults.

use std::path::Path;

use anyhow::{bail, Context, Result};
use hte_core::hettest::TestSettings;
use hte_core::learners::StackingParams;
use hte_core::metalearners::CrossfitParams;
use hte_core::ranking::RankingParams;
use hte_core::simbench::{BenchMethod, BenchmarkConfig, Calibration, CalibrationParams, CovariateModel};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

pub const DEFAULT_SEED: u64 = 20_240_101;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TestSection {
    #[serde(flatten)]
    pub settings: TestSettings,
    /// Level used to flag the analysis as showing no evidence against homogeneity.
    pub alpha: f64,
}

impl Default for TestSection {
    fn default() -> Self {
        TestSection {
            settings: TestSettings::default(),
            alpha: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RankingSection {
    #[serde(flatten)]
    pub params: RankingParams,
    /// Number of top-ranked covariates given subgroup displays.
    pub top_k: usize,
}

impl Default for RankingSection {
    fn default() -> Self {
        RankingSection {
            params: RankingParams::default(),
            top_k: 5,
        }
    }
}

/// Benchmark settings; the learner, cross-fitting, test and ranking settings
/// come from the other sections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimbenchSection {
    pub scenarios: Vec<u8>,
    pub multipliers: Vec<f64>,
    pub replicates: usize,
    pub n: usize,
    pub methods: Vec<BenchMethod>,
    pub alpha: f64,
    pub covariates: CovariateModel,
    pub calibration: CalibrationParams,
    pub calibrations: Vec<Calibration>,
    pub cate_variants: bool,
}

impl Default for SimbenchSection {
    fn default() -> Self {
        let b = BenchmarkConfig::default();
        SimbenchSection {
            scenarios: b.scenarios,
            multipliers: b.multipliers,
            replicates: b.replicates,
            n: b.n,
            methods: b.methods,
            alpha: b.alpha,
            covariates: b.covariates,
            calibration: b.calibration,
            calibrations: b.calibrations,
            cate_variants: b.cate_variants,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct AppConfig {
    pub learners: StackingParams,
    pub metalearner: CrossfitParams,
    pub test: TestSection,
    pub ranking: RankingSection,
    pub simbench: SimbenchSection,
}

impl AppConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let raw: Value = serde_json::from_str(text).context("config is not valid JSON")?;
        let config: AppConfig = serde_json::from_value(raw.clone()).context("config does not match the expected layout")?;
        let resolved = serde_json::to_value(&config)?;
        if let Some(path) = unknown_key(&raw, &resolved, String::new()) {
            bail!("unknown config key `{path}`");
        }
        Ok(config)
    }

    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(AppConfig::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                AppConfig::from_json(&text).with_context(|| format!("in config {}", p.display()))
            }
        }
    }

    /// SHA-256 of the resolved configuration's JSON form.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn benchmark_config(&self) -> BenchmarkConfig {
        let s = &self.simbench;
        BenchmarkConfig {
            scenarios: s.scenarios.clone(),
            multipliers: s.multipliers.clone(),
            replicates: s.replicates,
            n: s.n,
            methods: s.methods.clone(),
            alpha: s.alpha,
            covariates: s.covariates.clone(),
            calibration: s.calibration.clone(),
            calibrations: s.calibrations.clone(),
            learners: self.learners.clone(),
            crossfit: self.metalearner.clone(),
            test: self.test.settings,
            ranking: self.ranking.params.clone(),
            cate_variants: s.cate_variants,
        }
    }
}

/// First key of `raw` with no counterpart in the resolved document. Member
/// lists are matched element-wise; other arrays are taken as given.
fn unknown_key(raw: &Value, resolved: &Value, prefix: String) -> Option<String> {
    match (raw, resolved) {
        (Value::Object(r), Value::Object(s)) => r.iter().find_map(|(k, v)| {
            let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
            match s.get(k) {
                None => Some(path),
                Some(sv) => unknown_key(v, sv, path),
            }
        }),
        (Value::Array(r), Value::Array(s)) if r.len() == s.len() => r
            .iter()
            .zip(s)
            .enumerate()
            .find_map(|(i, (a, b))| unknown_key(a, b, format!("{prefix}[{i}]"))),
        _ => None,
    }
}
