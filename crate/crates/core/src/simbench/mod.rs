//! Simulation benchmark: synthetic trials from four known data-generating
//! models, calibrated effect sizes, and per-replicate scoring of the
//! heterogeneity test, the top-ranked covariate and the CATE error.

mod calibration;
mod covariates;
mod scenarios;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use calibration::{
    calibrate, calibrate_s, Calibration, CalibrationParams, GridPoint, CALIBRATION_NOTE, DEFAULT_CALIBRATION_REPS,
    DEFAULT_TARGET_R2, GRID_MULTIPLIERS, INTERACTION_ALPHA, INTERACTION_POWER, OVERALL_ALPHA, OVERALL_POWER,
};
pub use covariates::{covariate_name, CovariateModel, CATEGORY_LEVELS};
pub use scenarios::{
    mean_response, oracle_tau, predictive, prognostic, randomize_treatment, scenario_response, truth_set,
    ScenarioSpec,
};

use crate::baselines::{multivariate_baseline, univariate_baseline};
use crate::data::{Covariates, OutcomeKind, TrialDataset};
use crate::error::{Error, Result};
use crate::hettest::{global_test, TestSettings};
use crate::learners::StackingParams;
use crate::metalearners::{dr_learner_crossfit, CrossfitParams};
use crate::ranking::{cate_oob, rank_effect_modifiers, RankingParams};
use crate::rng::{self, derive_seed, TAG_SIM};
use crate::stats::{chi2_gof_uniform, ks_uniform_pvalue, mean, standard_error};

// sub-stream labels under TAG_SIM (1 and 2 are used by calibration)
const SIM_DATA: u64 = 3;
const SIM_METHOD: u64 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchMethod {
    DrLearner,
    Univariate,
    Multivariate,
}

/// Rows of the replicate table. The last three only carry a CATE error and
/// come from the DR-learner run when `cate_variants` is set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordMethod {
    DrLearner,
    Univariate,
    Multivariate,
    DrOob,
    IpwLearner,
    TLearner,
}

impl From<BenchMethod> for RecordMethod {
    fn from(m: BenchMethod) -> Self {
        match m {
            BenchMethod::DrLearner => RecordMethod::DrLearner,
            BenchMethod::Univariate => RecordMethod::Univariate,
            BenchMethod::Multivariate => RecordMethod::Multivariate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchmarkConfig {
    pub scenarios: Vec<u8>,
    pub multipliers: Vec<f64>,
    pub replicates: usize,
    pub n: usize,
    pub methods: Vec<BenchMethod>,
    pub alpha: f64,
    pub covariates: CovariateModel,
    pub calibration: CalibrationParams,
    /// Precomputed calibrations; scenarios missing here are calibrated at run time.
    pub calibrations: Vec<Calibration>,
    pub learners: StackingParams,
    pub crossfit: CrossfitParams,
    pub test: TestSettings,
    pub ranking: RankingParams,
    /// Also score the out-of-bag forest CATE and the IPW- and T-learners.
    pub cate_variants: bool,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            scenarios: vec![1, 2, 3, 4],
            multipliers: GRID_MULTIPLIERS.to_vec(),
            replicates: 500,
            n: 500,
            methods: vec![BenchMethod::DrLearner, BenchMethod::Univariate, BenchMethod::Multivariate],
            alpha: 0.10,
            covariates: CovariateModel::default(),
            calibration: CalibrationParams::default(),
            calibrations: Vec::new(),
            learners: StackingParams::default(),
            crossfit: CrossfitParams::default(),
            test: TestSettings::default(),
            ranking: RankingParams::default(),
            cate_variants: false,
        }
    }
}

impl BenchmarkConfig {
    /// Smoke-test scale: 100 replicates of n = 200.
    pub fn fast(mut self) -> Self {
        self.replicates = 100;
        self.n = 200;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.scenarios.is_empty() || self.multipliers.is_empty() || self.methods.is_empty() {
            return Err(Error::param("benchmark needs at least one scenario, grid point and method"));
        }
        for &id in &self.scenarios {
            scenarios::check_id(id)?;
        }
        if self.replicates == 0 {
            return Err(Error::param("benchmark needs at least one replicate"));
        }
        if !(0.0 < self.alpha && self.alpha < 1.0) {
            return Err(Error::param("alpha must lie in (0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub scenario: u8,
    pub multiplier: f64,
    pub replicate: usize,
    pub method: RecordMethod,
    pub failed: bool,
    pub global_p: Option<f64>,
    pub top_covariate: Option<String>,
    pub top_in_truth: Option<bool>,
    pub mse: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionCount {
    pub covariate: String,
    pub count: usize,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodAggregate {
    pub scenario: u8,
    pub multiplier: f64,
    pub beta1: f64,
    pub beta0: f64,
    pub method: RecordMethod,
    pub replicates: usize,
    pub failed: usize,
    pub rejection_rate: Option<f64>,
    pub mean_p: Option<f64>,
    pub se_p: Option<f64>,
    /// Kolmogorov–Smirnov p-value of the global p-values against Uniform(0, 1).
    pub uniformity_p: Option<f64>,
    pub selection: Vec<SelectionCount>,
    /// Chi-square goodness-of-fit p-value of the selection counts against equal probability.
    pub selection_gof_p: Option<f64>,
    pub top_in_truth_rate: Option<f64>,
    pub mean_mse: Option<f64>,
    pub se_mse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub config: BenchmarkConfig,
    pub seed: u64,
    pub calibrations: Vec<Calibration>,
    pub aggregates: Vec<MethodAggregate>,
    pub records: Vec<ReplicateRecord>,
    pub note: String,
}

impl BenchmarkReport {
    pub fn aggregate(&self, scenario: u8, multiplier: f64, method: RecordMethod) -> Option<&MethodAggregate> {
        self.aggregates
            .iter()
            .find(|a| a.scenario == scenario && a.method == method && (a.multiplier - multiplier).abs() < 1e-12)
    }

    /// Writes `report.json`, `replicates.csv` and `config.json` into `dir`.
    pub fn write_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        #[derive(Serialize)]
        struct ReportFile<'a> {
            seed: u64,
            alpha: f64,
            replicates: usize,
            n: usize,
            calibrations: &'a [Calibration],
            aggregates: &'a [MethodAggregate],
            note: &'a str,
        }
        let report = ReportFile {
            seed: self.seed,
            alpha: self.config.alpha,
            replicates: self.config.replicates,
            n: self.config.n,
            calibrations: &self.calibrations,
            aggregates: &self.aggregates,
            note: &self.note,
        };
        fs::write(dir.join("report.json"), serde_json::to_string_pretty(&report)? + "\n")?;

        #[derive(Serialize)]
        struct ConfigFile<'a> {
            seed: u64,
            config: &'a BenchmarkConfig,
            calibrations: &'a [Calibration],
        }
        let config = ConfigFile {
            seed: self.seed,
            config: &self.config,
            calibrations: &self.calibrations,
        };
        fs::write(dir.join("config.json"), serde_json::to_string_pretty(&config)? + "\n")?;

        let mut w = csv::Writer::from_path(dir.join("replicates.csv"))?;
        for r in &self.records {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Reads the replicate table written by [`BenchmarkReport::write_dir`].
pub fn read_replicates(path: impl AsRef<Path>) -> Result<Vec<ReplicateRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for row in r.deserialize() {
        out.push(row?);
    }
    Ok(out)
}

/// Draws one replicate's trial and oracle CATE. Replicate `r` uses the same
/// covariates, assignment and noise at every grid point of a scenario.
pub fn simulate_replicate(
    spec: &ScenarioSpec,
    model: &CovariateModel,
    seed: u64,
    replicate: usize,
) -> Result<(TrialDataset, Vec<f64>)> {
    let mut g = rng::stream(seed, &[TAG_SIM, SIM_DATA, u64::from(spec.id), replicate as u64]);
    let x = model.generate(spec.n, &mut g)?;
    let a = randomize_treatment(spec.n, &mut g);
    let (y, tau) = scenario_response(spec, &x, &a, &mut g)?;
    Ok((TrialDataset::new(x, a, y, OutcomeKind::Continuous)?, tau))
}

fn mse(est: &[f64], truth: &[f64]) -> f64 {
    est.iter().zip(truth).map(|(e, t)| (e - t).powi(2)).sum::<f64>() / truth.len() as f64
}

struct MethodOutcome {
    global_p: Option<f64>,
    top: Option<usize>,
    mse: f64,
}

struct Scored {
    method: RecordMethod,
    outcome: Result<MethodOutcome>,
}

fn run_dr(
    data: &TrialDataset,
    tau: &[f64],
    config: &BenchmarkConfig,
    seed: u64,
) -> Vec<Scored> {
    let variants = [RecordMethod::DrOob, RecordMethod::IpwLearner, RecordMethod::TLearner];
    let fail_all = |e: Error| {
        let msg = e.to_string();
        let mut out = vec![Scored { method: RecordMethod::DrLearner, outcome: Err(Error::Fit(msg.clone())) }];
        if config.cate_variants {
            out.extend(variants.iter().map(|&m| Scored { method: m, outcome: Err(Error::Fit(msg.clone())) }));
        }
        out
    };
    let params = CrossfitParams { companions: config.cate_variants, ..config.crossfit.clone() };
    let cf = match dr_learner_crossfit(data, &config.learners, &params, derive_seed(seed, &[0])) {
        Ok(cf) => cf,
        Err(e) => return fail_all(e),
    };
    let x = &data.covariates;
    let psi = &cf.psi.psi;
    let test = global_test(x, psi, config.test.statistic, config.test.method, config.test.permutations, derive_seed(seed, &[1]));
    let ranked = rank_effect_modifiers(x, psi, &config.ranking, derive_seed(seed, &[2]));
    let dr = match (test, &ranked) {
        (Ok(t), Ok((ranking, _))) => Ok(MethodOutcome {
            global_p: Some(t.p_value),
            top: (!ranking.degenerate).then(|| ranking.top()),
            mse: mse(&cf.tau.tau_hat, tau),
        }),
        (Err(e), _) => Err(e),
        (_, Err(e)) => Err(Error::Fit(e.to_string())),
    };
    let mut out = vec![Scored { method: RecordMethod::DrLearner, outcome: dr }];
    if config.cate_variants {
        let only_mse = |v: Option<&Vec<f64>>| -> Result<MethodOutcome> {
            let v = v.ok_or_else(|| Error::Fit("companion estimate missing".into()))?;
            Ok(MethodOutcome { global_p: None, top: None, mse: mse(v, tau) })
        };
        let oob = match &ranked {
            Ok((_, forest)) => cate_oob(forest, x).map(|(c, _)| MethodOutcome { global_p: None, top: None, mse: mse(&c.tau_hat, tau) }),
            Err(e) => Err(Error::Fit(e.to_string())),
        };
        out.push(Scored { method: RecordMethod::DrOob, outcome: oob });
        out.push(Scored { method: RecordMethod::IpwLearner, outcome: only_mse(cf.ipw_tau.as_ref().map(|c| &c.tau_hat)) });
        out.push(Scored { method: RecordMethod::TLearner, outcome: only_mse(cf.t_tau.as_ref().map(|c| &c.tau_hat)) });
    }
    out
}

fn run_method(method: BenchMethod, data: &TrialDataset, tau: &[f64], config: &BenchmarkConfig, seed: u64) -> Vec<Scored> {
    match method {
        BenchMethod::DrLearner => run_dr(data, tau, config, seed),
        BenchMethod::Univariate | BenchMethod::Multivariate => {
            let res = if method == BenchMethod::Univariate {
                univariate_baseline(data)
            } else {
                multivariate_baseline(data)
            };
            vec![Scored {
                method: method.into(),
                outcome: res.map(|b| MethodOutcome {
                    global_p: Some(b.global_p),
                    top: Some(b.top_covariate),
                    mse: mse(&b.tau_hat, tau),
                }),
            }]
        }
    }
}

fn replicate_records(
    cal: &Calibration,
    grid_index: usize,
    replicate: usize,
    config: &BenchmarkConfig,
    seed: u64,
) -> Vec<ReplicateRecord> {
    let spec = cal.spec(grid_index);
    let multiplier = cal.grid[grid_index].multiplier;
    let record = |method: RecordMethod, outcome: Result<MethodOutcome>, names: Option<&Covariates>| match outcome {
        Ok(o) => {
            let top = o.top.and_then(|j| names.map(|x| x.column(j).name.clone()));
            ReplicateRecord {
                scenario: spec.id,
                multiplier,
                replicate,
                method,
                failed: false,
                global_p: o.global_p,
                top_in_truth: top.as_ref().map(|t| truth_set(spec.id).contains(&t.as_str())),
                top_covariate: top,
                mse: Some(o.mse),
                error: None,
            }
        }
        Err(e) => ReplicateRecord {
            scenario: spec.id,
            multiplier,
            replicate,
            method,
            failed: true,
            global_p: None,
            top_covariate: None,
            top_in_truth: None,
            mse: None,
            error: Some(e.to_string()),
        },
    };
    let (data, tau) = match simulate_replicate(&spec, &config.covariates, seed, replicate) {
        Ok(d) => d,
        Err(e) => {
            let msg = e.to_string();
            return config
                .methods
                .iter()
                .map(|&m| record(m.into(), Err(Error::Fit(msg.clone())), None))
                .collect();
        }
    };
    let method_seed = derive_seed(seed, &[TAG_SIM, SIM_METHOD, u64::from(spec.id), replicate as u64]);
    config
        .methods
        .iter()
        .flat_map(|&m| run_method(m, &data, &tau, config, derive_seed(method_seed, &[m as u64])))
        .map(|s| record(s.method, s.outcome, Some(&data.covariates)))
        .collect()
}

/// Summarizes the replicate rows of one (scenario, grid point, method) cell.
pub fn aggregate_cell(
    records: &[&ReplicateRecord],
    covariate_names: &[String],
    alpha: f64,
    grid: &GridPoint,
    scenario: u8,
    method: RecordMethod,
) -> MethodAggregate {
    let ok: Vec<&&ReplicateRecord> = records.iter().filter(|r| !r.failed).collect();
    let ps: Vec<f64> = ok.iter().filter_map(|r| r.global_p).collect();
    let mses: Vec<f64> = ok.iter().filter_map(|r| r.mse).collect();
    let tops: Vec<&String> = ok.iter().filter_map(|r| r.top_covariate.as_ref()).collect();
    let nonempty = |v: &[f64]| !v.is_empty();

    let mut counts: BTreeMap<&str, usize> = covariate_names.iter().map(|c| (c.as_str(), 0)).collect();
    for t in &tops {
        *counts.entry(t.as_str()).or_insert(0) += 1;
    }
    let selection: Vec<SelectionCount> = if tops.is_empty() {
        Vec::new()
    } else {
        covariate_names
            .iter()
            .map(|c| SelectionCount {
                covariate: c.clone(),
                count: counts[c.as_str()],
                probability: counts[c.as_str()] as f64 / tops.len() as f64,
            })
            .collect()
    };
    let truth_hits: Vec<bool> = ok.iter().filter_map(|r| r.top_in_truth).collect();
    MethodAggregate {
        scenario,
        multiplier: grid.multiplier,
        beta1: grid.beta1,
        beta0: grid.beta0,
        method,
        replicates: records.len(),
        failed: records.len() - ok.len(),
        rejection_rate: nonempty(&ps).then(|| ps.iter().filter(|&&p| p <= alpha).count() as f64 / ps.len() as f64),
        mean_p: nonempty(&ps).then(|| mean(&ps)),
        se_p: (ps.len() > 1).then(|| standard_error(&ps)),
        uniformity_p: nonempty(&ps).then(|| ks_uniform_pvalue(&ps)),
        selection_gof_p: (!tops.is_empty()).then(|| {
            chi2_gof_uniform(&selection.iter().map(|s| s.count).collect::<Vec<_>>())
        }),
        selection,
        top_in_truth_rate: (!truth_hits.is_empty())
            .then(|| truth_hits.iter().filter(|&&h| h).count() as f64 / truth_hits.len() as f64),
        mean_mse: nonempty(&mses).then(|| mean(&mses)),
        se_mse: (mses.len() > 1).then(|| standard_error(&mses)),
    }
}

/// Recomputes every aggregate from replicate rows.
pub fn aggregate_records(
    records: &[ReplicateRecord],
    calibrations: &[Calibration],
    covariate_names: &[String],
    alpha: f64,
) -> Vec<MethodAggregate> {
    let mut cells: BTreeMap<(u8, usize, RecordMethod), Vec<&ReplicateRecord>> = BTreeMap::new();
    for r in records {
        let Some(cal) = calibrations.iter().find(|c| c.scenario == r.scenario) else { continue };
        let Some(g) = cal.grid_index(r.multiplier) else { continue };
        cells.entry((r.scenario, g, r.method)).or_default().push(r);
    }
    cells
        .into_iter()
        .map(|((scenario, g, method), rows)| {
            let cal = calibrations.iter().find(|c| c.scenario == scenario).expect("calibration present");
            aggregate_cell(&rows, covariate_names, alpha, &cal.grid[g], scenario, method)
        })
        .collect()
}

fn calibration_for(id: u8, config: &BenchmarkConfig, seed: u64) -> Result<Calibration> {
    if let Some(c) = config.calibrations.iter().find(|c| c.scenario == id) {
        if c.n != config.n {
            return Err(Error::param(format!(
                "supplied calibration for scenario {id} uses n = {}, benchmark uses n = {}",
                c.n, config.n
            )));
        }
        let mut c = c.clone();
        let star = c.beta1_star;
        // extend the supplied grid with any missing multipliers only if β0 is known
        for &m in &config.multipliers {
            if c.grid_index(m).is_none() {
                return Err(Error::param(format!(
                    "supplied calibration for scenario {id} lacks grid multiplier {m} (beta1* = {star})"
                )));
            }
        }
        c.grid.retain(|g| config.multipliers.iter().any(|&m| (g.multiplier - m).abs() < 1e-12));
        return Ok(c);
    }
    let params = CalibrationParams { multipliers: config.multipliers.clone(), ..config.calibration.clone() };
    calibrate(id, config.n, &params, &config.covariates, seed)
}

pub fn run_benchmark(config: &BenchmarkConfig, seed: u64) -> Result<BenchmarkReport> {
    config.validate()?;
    let calibrations: Vec<Calibration> = config
        .scenarios
        .iter()
        .map(|&id| calibration_for(id, config, seed))
        .collect::<Result<_>>()?;

    let jobs: Vec<(usize, usize, usize)> = calibrations
        .iter()
        .enumerate()
        .flat_map(|(c, cal)| (0..cal.grid.len()).flat_map(move |g| (0..config.replicates).map(move |r| (c, g, r))))
        .collect();
    let records: Vec<ReplicateRecord> = jobs
        .par_iter()
        .map(|&(c, g, r)| replicate_records(&calibrations[c], g, r, config, seed))
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect();

    let names: Vec<String> = (0..config.covariates.p).map(covariate_name).collect();
    let aggregates = aggregate_records(&records, &calibrations, &names, config.alpha);
    Ok(BenchmarkReport {
        config: config.clone(),
        seed,
        calibrations,
        aggregates,
        records,
        note: CALIBRATION_NOTE.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> BenchmarkConfig {
        BenchmarkConfig {
            scenarios: vec![2],
            multipliers: vec![0.0, 1.0],
            replicates: 2,
            n: 200,
            methods: vec![BenchMethod::DrLearner, BenchMethod::Univariate, BenchMethod::Multivariate],
            calibration: CalibrationParams { replicates: 500, ..Default::default() },
            learners: StackingParams::linear_only(),
            crossfit: CrossfitParams { folds: 3, ..Default::default() },
            test: TestSettings { permutations: 199, ..Default::default() },
            ranking: RankingParams { ntree: 20, ..Default::default() },
            cate_variants: true,
            ..Default::default()
        }
    }

    #[test]
    fn records_and_aggregates_are_consistent() {
        let config = tiny_config();
        let report = run_benchmark(&config, 17).unwrap();
        // 2 grid points × 2 replicates × (dr + 3 variants + 2 baselines)
        assert_eq!(report.records.len(), 2 * 2 * 6);
        assert_eq!(report.aggregates.len(), 2 * 6);
        for a in &report.aggregates {
            assert_eq!(a.replicates, 2);
        }
        let names: Vec<String> = (0..30).map(covariate_name).collect();
        let again = aggregate_records(&report.records, &report.calibrations, &names, config.alpha);
        assert_eq!(again, report.aggregates);
        let dr = report.aggregate(2, 1.0, RecordMethod::DrLearner).unwrap();
        assert_eq!(dr.failed, 0);
        assert!(dr.mean_p.is_some() && dr.mean_mse.is_some());
        let t = report.aggregate(2, 0.0, RecordMethod::TLearner).unwrap();
        assert!(t.mean_p.is_none() && t.mean_mse.is_some());
    }

    #[test]
    fn benchmark_is_deterministic_and_roundtrips() {
        let mut config = tiny_config();
        config.methods = vec![BenchMethod::Univariate];
        let a = run_benchmark(&config, 5).unwrap();
        let b = run_benchmark(&config, 5).unwrap();
        assert_eq!(a, b);
        let dir = tempfile::tempdir().unwrap();
        a.write_dir(dir.path()).unwrap();
        let rows = read_replicates(dir.path().join("replicates.csv")).unwrap();
        assert_eq!(rows, a.records);
        for f in ["report.json", "config.json"] {
            assert!(dir.path().join(f).exists());
        }
    }

    #[test]
    fn supplied_calibration_is_used() {
        let mut config = tiny_config();
        config.methods = vec![BenchMethod::Univariate];
        let cal = calibrate(2, 200, &CalibrationParams { replicates: 300, ..Default::default() }, &config.covariates, 1).unwrap();
        config.calibrations = vec![cal.clone()];
        let report = run_benchmark(&config, 5).unwrap();
        assert_eq!(report.calibrations[0].beta1_star, cal.beta1_star);
        assert_eq!(report.calibrations[0].grid.len(), 2);
        config.n = 100;
        assert!(run_benchmark(&config, 5).is_err());
    }

    #[test]
    fn grid_points_share_replicate_draws() {
        let model = CovariateModel::default();
        let s0 = ScenarioSpec::new(2, 1.0, 0.2, 0.0, 50).unwrap();
        let s1 = ScenarioSpec { beta1: 1.0, ..s0 };
        let (d0, _) = simulate_replicate(&s0, &model, 3, 4).unwrap();
        let (d1, tau1) = simulate_replicate(&s1, &model, 3, 4).unwrap();
        assert_eq!(d0.covariates, d1.covariates);
        assert_eq!(d0.treatment, d1.treatment);
        for i in 0..50 {
            let shift = f64::from(d1.treatment[i]) * (tau1[i] - 0.2);
            assert!((d1.outcome[i] - d0.outcome[i] - shift).abs() < 1e-12);
        }
    }
}
