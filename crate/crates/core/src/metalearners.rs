//! ATE estimators, pseudo-outcomes and meta-learners for the conditional
//! average treatment effect, including the cross-fitted DR-learner.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{assign_folds, Covariates, FoldAssignment, OutcomeKind, TrialDataset};
use crate::error::{Error, Result};
use crate::learners::{fit_stacking, Family, StackingParams};
use crate::rng::{derive_seed, TAG_CROSSFIT};

pub const PROPENSITY_LOWER: f64 = 0.025;
pub const PROPENSITY_UPPER: f64 = 0.975;
/// Clip fraction above which a warning is attached to the fit.
pub const CLIP_WARNING_FRACTION: f64 = 0.10;
/// Smallest per-arm count accepted in any cross-fitting fold or T-learner arm.
pub const MIN_ARM_SIZE: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PropensityMode {
    #[default]
    Estimated,
    FixedRandomization,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DrFormula {
    #[default]
    Dr1,
    Dr2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PseudoFormula {
    Dr1,
    Dr2,
    Ipw,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CateSource {
    DrCrossfit,
    OobCforest,
    SLearner,
    TLearner,
    IpwLearner,
}

/// Propensity and arm-specific outcome predictions for every sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuisanceFit {
    pub pi_hat: Vec<f64>,
    pub mu0_hat: Vec<f64>,
    pub mu1_hat: Vec<f64>,
    pub fold_of: Option<FoldAssignment>,
    pub mode: PropensityMode,
    /// Number of propensity values moved onto a clipping bound.
    pub clip_count: usize,
    /// `trained_on[k]`: rows used to train the models of fold `k`.
    pub trained_on: Vec<Vec<usize>>,
    /// `produced_by[i]`: which fold's models produced sample `i`'s nuisances.
    pub produced_by: Vec<usize>,
}

pub fn clip_propensity(p: f64) -> f64 {
    p.clamp(PROPENSITY_LOWER, PROPENSITY_UPPER)
}

impl NuisanceFit {
    /// Wraps externally supplied nuisance values, clipping the propensity.
    pub fn from_values(pi_hat: Vec<f64>, mu0_hat: Vec<f64>, mu1_hat: Vec<f64>) -> Result<Self> {
        let n = pi_hat.len();
        if mu0_hat.len() != n || mu1_hat.len() != n {
            return Err(Error::param("nuisance vectors differ in length"));
        }
        let clip_count = pi_hat.iter().filter(|&&p| clip_propensity(p) != p).count();
        Ok(NuisanceFit {
            pi_hat: pi_hat.into_iter().map(clip_propensity).collect(),
            mu0_hat,
            mu1_hat,
            fold_of: None,
            mode: PropensityMode::Estimated,
            clip_count,
            trained_on: Vec::new(),
            produced_by: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.pi_hat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pi_hat.is_empty()
    }

    pub fn clip_fraction(&self) -> f64 {
        self.clip_count as f64 / self.len().max(1) as f64
    }

    /// True when no sample's nuisances came from a model trained on that sample.
    pub fn crossfit_hygiene_ok(&self) -> bool {
        if self.produced_by.len() != self.len() {
            return false;
        }
        self.produced_by
            .iter()
            .enumerate()
            .all(|(i, &k)| self.trained_on.get(k).is_some_and(|rows| rows.binary_search(&i).is_err()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoOutcomeVector {
    pub psi: Vec<f64>,
    pub formula: PseudoFormula,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CateEstimate {
    pub tau_hat: Vec<f64>,
    pub source: CateSource,
    pub folds: Option<usize>,
}

fn ipw_weight(a: u8, pi: f64) -> f64 {
    (f64::from(a) - pi) / (pi * (1.0 - pi))
}

fn mean(v: impl Iterator<Item = f64>, n: usize) -> f64 {
    v.sum::<f64>() / n as f64
}

pub fn ate_gcomp(mu0_hat: &[f64], mu1_hat: &[f64]) -> f64 {
    mean(mu1_hat.iter().zip(mu0_hat).map(|(a, b)| a - b), mu0_hat.len())
}

pub fn ate_ipw(y: &[f64], a: &[u8], pi_hat: &[f64]) -> f64 {
    mean((0..y.len()).map(|i| ipw_weight(a[i], pi_hat[i]) * y[i]), y.len())
}

/// Mean of the augmented IPW summand (IPW term plus outcome-model correction).
pub fn ate_aipw(y: &[f64], a: &[u8], nuisance: &NuisanceFit) -> f64 {
    mean((0..y.len()).map(|i| dr2_value(y[i], a[i], nuisance.pi_hat[i], nuisance.mu0_hat[i], nuisance.mu1_hat[i])), y.len())
}

/// Outcome-model contrast corrected by inverse-probability weighted residuals.
pub fn dr1_value(y: f64, a: u8, pi: f64, mu0: f64, mu1: f64) -> f64 {
    let mu_a = if a == 1 { mu1 } else { mu0 };
    ipw_weight(a, pi) * (y - mu_a) + mu1 - mu0
}

/// IPW pseudo-outcome corrected by outcome models weighted by treatment residuals.
pub fn dr2_value(y: f64, a: u8, pi: f64, mu0: f64, mu1: f64) -> f64 {
    let af = f64::from(a);
    ipw_weight(a, pi) * y + (1.0 - af / pi) * mu1 - (1.0 - (1.0 - af) / (1.0 - pi)) * mu0
}

pub fn pseudo_outcome_dr(y: &[f64], a: &[u8], nuisance: &NuisanceFit, formula: DrFormula) -> PseudoOutcomeVector {
    let f = match formula {
        DrFormula::Dr1 => dr1_value,
        DrFormula::Dr2 => dr2_value,
    };
    PseudoOutcomeVector {
        psi: (0..y.len())
            .map(|i| f(y[i], a[i], nuisance.pi_hat[i], nuisance.mu0_hat[i], nuisance.mu1_hat[i]))
            .collect(),
        formula: match formula {
            DrFormula::Dr1 => PseudoFormula::Dr1,
            DrFormula::Dr2 => PseudoFormula::Dr2,
        },
    }
}

pub fn pseudo_outcome_ipw(y: &[f64], a: &[u8], pi_hat: &[f64]) -> PseudoOutcomeVector {
    PseudoOutcomeVector {
        psi: (0..y.len()).map(|i| ipw_weight(a[i], pi_hat[i]) * y[i]).collect(),
        formula: PseudoFormula::Ipw,
    }
}

fn outcome_family(kind: OutcomeKind) -> Family {
    match kind {
        OutcomeKind::Continuous => Family::Gaussian,
        OutcomeKind::Binary => Family::Binomial,
    }
}

fn select(v: &[f64], rows: &[usize]) -> Vec<f64> {
    rows.iter().map(|&i| v[i]).collect()
}

/// S-learner: one model on (X, A), contrast of predictions at A = 1 and A = 0.
pub fn cate_s_learner(data: &TrialDataset, params: &StackingParams, seed: u64) -> Result<CateEstimate> {
    let name = unique_name(&data.covariates, "treatment");
    let xa = data.covariates.with_numeric(&name, data.treatment_f64())?;
    let model = fit_stacking(&xa, &data.outcome, outcome_family(data.outcome_kind), params, seed)?;
    let n = data.n();
    let p1 = model.predict(&data.covariates.with_numeric(&name, vec![1.0; n])?);
    let p0 = model.predict(&data.covariates.with_numeric(&name, vec![0.0; n])?);
    Ok(CateEstimate {
        tau_hat: p1.iter().zip(&p0).map(|(a, b)| a - b).collect(),
        source: CateSource::SLearner,
        folds: None,
    })
}

fn unique_name(x: &Covariates, base: &str) -> String {
    let mut name = base.to_string();
    while x.index_of(&name).is_some() {
        name.push('_');
    }
    name
}

/// T-learner: separate models per arm, contrast of their predictions.
pub fn cate_t_learner(data: &TrialDataset, params: &StackingParams, seed: u64) -> Result<CateEstimate> {
    let (n0, n1) = data.arm_sizes();
    if n0.min(n1) < MIN_ARM_SIZE {
        return Err(Error::Fit(format!(
            "T-learner needs at least {MIN_ARM_SIZE} samples per arm, got control={n0}, treated={n1}"
        )));
    }
    let family = outcome_family(data.outcome_kind);
    let mut preds = Vec::with_capacity(2);
    for arm in [0u8, 1] {
        let rows: Vec<usize> = (0..data.n()).filter(|&i| data.treatment[i] == arm).collect();
        let m = fit_stacking(
            &data.covariates.subset(&rows),
            &select(&data.outcome, &rows),
            family,
            params,
            derive_seed(seed, &[u64::from(arm)]),
        )?;
        preds.push(m.predict(&data.covariates));
    }
    Ok(CateEstimate {
        tau_hat: preds[1].iter().zip(&preds[0]).map(|(a, b)| a - b).collect(),
        source: CateSource::TLearner,
        folds: None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CrossfitParams {
    pub folds: usize,
    pub propensity: PropensityMode,
    pub formula: DrFormula,
    /// Also produce the cross-fitted IPW- and T-learner estimates from the same nuisances.
    pub companions: bool,
}

impl Default for CrossfitParams {
    fn default() -> Self {
        CrossfitParams {
            folds: 5,
            propensity: PropensityMode::Estimated,
            formula: DrFormula::Dr1,
            companions: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossfitOutput {
    pub nuisance: NuisanceFit,
    pub psi: PseudoOutcomeVector,
    pub tau: CateEstimate,
    pub ipw_psi: Option<PseudoOutcomeVector>,
    pub ipw_tau: Option<CateEstimate>,
    pub t_tau: Option<CateEstimate>,
    pub warnings: Vec<String>,
}

struct FoldResult {
    test: Vec<usize>,
    train: Vec<usize>,
    pi: Vec<f64>,
    mu0: Vec<f64>,
    mu1: Vec<f64>,
    clipped: usize,
    tau_all: Vec<f64>,
    ipw_tau_all: Option<Vec<f64>>,
    t_tau_all: Option<Vec<f64>>,
}

/// Cross-fitted DR-learner: nuisances on K−1 folds, pseudo-outcomes and a
/// CATE regression on the held-out fold, CATE averaged over the K fold models.
pub fn dr_learner_crossfit(
    data: &TrialDataset,
    stacking: &StackingParams,
    params: &CrossfitParams,
    seed: u64,
) -> Result<CrossfitOutput> {
    let n = data.n();
    let k = params.folds;
    let folds = assign_folds(n, k, &data.treatment, seed)?;
    for f in 0..k {
        let test = folds.test_indices(f);
        let treated = test.iter().filter(|&&i| data.treatment[i] == 1).count();
        let smallest = treated.min(test.len() - treated);
        if smallest < MIN_ARM_SIZE {
            return Err(Error::param(format!(
                "fold {f} holds only {smallest} samples of one arm; cross-fitting needs at least {MIN_ARM_SIZE} per arm and fold"
            )));
        }
    }
    let family = outcome_family(data.outcome_kind);
    let treated_fraction = data.arm_sizes().1 as f64 / n as f64;
    let x = &data.covariates;
    let a = &data.treatment;
    let y = &data.outcome;

    let results: Vec<FoldResult> = (0..k)
        .into_par_iter()
        .map(|f| -> Result<FoldResult> {
            let test = folds.test_indices(f);
            let train = folds.train_indices(f);
            let xtest = x.subset(&test);
            let s = |model: u64| derive_seed(seed, &[TAG_CROSSFIT, f as u64, model]);

            // Step 1: nuisance models on the training folds
            let raw_pi: Vec<f64> = match params.propensity {
                PropensityMode::FixedRandomization => vec![treated_fraction; test.len()],
                PropensityMode::Estimated => {
                    let atr: Vec<f64> = train.iter().map(|&i| f64::from(a[i])).collect();
                    fit_stacking(&x.subset(&train), &atr, Family::Binomial, stacking, s(0))?.predict(&xtest)
                }
            };
            let clipped = raw_pi.iter().filter(|&&p| clip_propensity(p) != p).count();
            let pi: Vec<f64> = raw_pi.into_iter().map(clip_propensity).collect();
            let mut mu = Vec::with_capacity(2);
            let mut arm_models = Vec::with_capacity(2);
            for arm in [0u8, 1] {
                let rows: Vec<usize> = train.iter().copied().filter(|&i| a[i] == arm).collect();
                let m = fit_stacking(&x.subset(&rows), &select(y, &rows), family, stacking, s(1 + u64::from(arm)))?;
                mu.push(m.predict(&xtest));
                arm_models.push(m);
            }
            let mu1 = mu.pop().unwrap_or_default();
            let mu0 = mu.pop().unwrap_or_default();

            // Step 2: pseudo-outcome regression on the held-out fold
            let psi: Vec<f64> = (0..test.len())
                .map(|t| {
                    let i = test[t];
                    match params.formula {
                        DrFormula::Dr1 => dr1_value(y[i], a[i], pi[t], mu0[t], mu1[t]),
                        DrFormula::Dr2 => dr2_value(y[i], a[i], pi[t], mu0[t], mu1[t]),
                    }
                })
                .collect();
            let tau_all = fit_stacking(&xtest, &psi, Family::Gaussian, stacking, s(3))?.predict(x);

            let (ipw_tau_all, t_tau_all) = if params.companions {
                let psi_ipw: Vec<f64> = (0..test.len()).map(|t| ipw_weight(a[test[t]], pi[t]) * y[test[t]]).collect();
                let ipw = fit_stacking(&xtest, &psi_ipw, Family::Gaussian, stacking, s(4))?.predict(x);
                let m1 = arm_models[1].predict(x);
                let m0 = arm_models[0].predict(x);
                (Some(ipw), Some(m1.iter().zip(&m0).map(|(u, v)| u - v).collect()))
            } else {
                (None, None)
            };
            Ok(FoldResult {
                test,
                train,
                pi,
                mu0,
                mu1,
                clipped,
                tau_all,
                ipw_tau_all,
                t_tau_all,
            })
        })
        .enumerate()
        .map(|(f, r)| r.map_err(|e| e.in_fold(f)))
        .collect::<Result<Vec<_>>>()?;

    let mut pi_hat = vec![0.0; n];
    let mut mu0_hat = vec![0.0; n];
    let mut mu1_hat = vec![0.0; n];
    let mut produced_by = vec![0; n];
    let mut trained_on = Vec::with_capacity(k);
    let mut clip_count = 0;
    let mut tau = vec![0.0; n];
    let mut ipw_tau = params.companions.then(|| vec![0.0; n]);
    let mut t_tau = params.companions.then(|| vec![0.0; n]);
    // fold order is fixed, so the floating-point sums are reproducible
    for (f, r) in results.into_iter().enumerate() {
        for (t, &i) in r.test.iter().enumerate() {
            pi_hat[i] = r.pi[t];
            mu0_hat[i] = r.mu0[t];
            mu1_hat[i] = r.mu1[t];
            produced_by[i] = f;
        }
        clip_count += r.clipped;
        for (acc, v) in tau.iter_mut().zip(&r.tau_all) {
            *acc += v / k as f64;
        }
        if let (Some(acc), Some(v)) = (ipw_tau.as_mut(), r.ipw_tau_all.as_ref()) {
            acc.iter_mut().zip(v).for_each(|(s, v)| *s += v / k as f64);
        }
        if let (Some(acc), Some(v)) = (t_tau.as_mut(), r.t_tau_all.as_ref()) {
            acc.iter_mut().zip(v).for_each(|(s, v)| *s += v / k as f64);
        }
        trained_on.push(r.train);
    }
    let nuisance = NuisanceFit {
        pi_hat,
        mu0_hat,
        mu1_hat,
        fold_of: Some(folds),
        mode: params.propensity,
        clip_count,
        trained_on,
        produced_by,
    };
    let mut warnings = Vec::new();
    if nuisance.clip_fraction() > CLIP_WARNING_FRACTION {
        warnings.push(format!(
            "{:.1}% of propensity estimates were clipped to [{PROPENSITY_LOWER}, {PROPENSITY_UPPER}]",
            100.0 * nuisance.clip_fraction()
        ));
    }
    let psi = pseudo_outcome_dr(y, a, &nuisance, params.formula);
    let ipw_psi = params.companions.then(|| pseudo_outcome_ipw(y, a, &nuisance.pi_hat));
    Ok(CrossfitOutput {
        psi,
        tau: CateEstimate {
            tau_hat: tau,
            source: CateSource::DrCrossfit,
            folds: Some(k),
        },
        ipw_psi,
        ipw_tau: ipw_tau.map(|t| CateEstimate {
            tau_hat: t,
            source: CateSource::IpwLearner,
            folds: Some(k),
        }),
        t_tau: t_tau.map(|t| CateEstimate {
            tau_hat: t,
            source: CateSource::TLearner,
            folds: Some(k),
        }),
        nuisance,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::CovariateColumn;
    use crate::rng;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    /// y = x0 + A·(effect + slope·x1) + ε with exactly balanced arms.
    fn simulate(n: usize, effect: f64, slope: f64, seed: u64) -> TrialDataset {
        let mut r = rng::stream(seed, &[]);
        let x0: Vec<f64> = (0..n).map(|_| r.random()).collect();
        let x1: Vec<f64> = (0..n).map(|_| r.random()).collect();
        let g: Vec<&str> = (0..n).map(|_| if r.random::<bool>() { "Y" } else { "N" }).collect();
        let mut a: Vec<u8> = (0..n).map(|i| u8::from(i < n / 2)).collect();
        rand::seq::SliceRandom::shuffle(a.as_mut_slice(), &mut r);
        let y: Vec<f64> = (0..n)
            .map(|i| {
                let e: f64 = StandardNormal.sample(&mut r);
                x0[i] + f64::from(a[i]) * (effect + slope * x1[i]) + e
            })
            .collect();
        let x = Covariates::new(vec![
            CovariateColumn::numeric("x0", x0),
            CovariateColumn::numeric("x1", x1),
            CovariateColumn::from_labels("g", &g),
        ])
        .unwrap();
        TrialDataset::new(x, a, y, OutcomeKind::Continuous).unwrap()
    }

    #[test]
    fn gcomp_examples() {
        assert_eq!(ate_gcomp(&[1.0, 1.0], &[2.0, 4.0]), 2.0);
        assert_eq!(ate_gcomp(&[0.3, 0.7], &[0.3, 0.7]), 0.0);
        let shifted = ate_gcomp(&[6.0, 6.0], &[7.0, 9.0]);
        assert!((shifted - 2.0).abs() < 1e-12);
    }

    #[test]
    fn ipw_examples() {
        assert_eq!(ate_ipw(&[3.0, 1.0], &[1, 0], &[0.5, 0.5]), 2.0);
        assert_eq!(ate_ipw(&[0.0, 0.0], &[1, 0], &[0.3, 0.6]), 0.0);
    }

    #[test]
    fn ipw_printed_forms_agree() {
        let mut r = rng::stream(1, &[]);
        let n = 200;
        let y: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut r)).collect();
        let a: Vec<u8> = (0..n).map(|_| u8::from(r.random::<bool>())).collect();
        let pi: Vec<f64> = (0..n).map(|_| r.random_range(0.025..0.975)).collect();
        let split_form: f64 = (0..n)
            .map(|i| (f64::from(a[i]) / pi[i] - (1.0 - f64::from(a[i])) / (1.0 - pi[i])) * y[i])
            .sum::<f64>()
            / n as f64;
        assert!((ate_ipw(&y, &a, &pi) - split_form).abs() < 1e-12);
    }

    #[test]
    fn hand_evaluated_pseudo_outcomes() {
        let v1 = dr1_value(1.0, 0, 0.25, 0.6, 1.2);
        let v2 = dr2_value(1.0, 0, 0.25, 0.6, 1.2);
        assert!((v1 - 0.6 + 0.4 / 0.75).abs() < 1e-12);
        assert!((v1 - 0.0667).abs() < 5e-5 && (v2 - 0.0667).abs() < 5e-5);
        assert_eq!(dr1_value(3.0, 1, 0.5, 0.0, 0.0), 6.0);
        let nf = NuisanceFit::from_values(vec![0.4; 3], vec![0.5; 3], vec![2.0; 3]).unwrap();
        let psi = pseudo_outcome_dr(&[2.0, 0.5, 2.0], &[1, 0, 1], &nf, DrFormula::Dr1);
        assert!(psi.psi.iter().all(|&v| (v - 1.5).abs() < 1e-12));
    }

    #[test]
    fn ipw_pseudo_outcome_at_half() {
        let y = [1.5, -2.0, 0.3, 4.0];
        let a = [1, 0, 0, 1];
        let psi = pseudo_outcome_ipw(&y, &a, &[0.5; 4]);
        for i in 0..4 {
            assert_eq!(psi.psi[i], 2.0 * (2.0 * f64::from(a[i]) - 1.0) * y[i]);
        }
        let c = pseudo_outcome_ipw(&[2.0; 4], &a, &[0.5; 4]);
        assert_eq!(c.psi.iter().sum::<f64>(), 0.0);
    }

    #[test]
    fn aipw_special_cases() {
        let mut r = rng::stream(2, &[]);
        let n = 100;
        let y: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut r)).collect();
        let a: Vec<u8> = (0..n).map(|_| u8::from(r.random::<bool>())).collect();
        let pi: Vec<f64> = (0..n).map(|_| r.random_range(0.1..0.9)).collect();
        let zero = NuisanceFit::from_values(pi.clone(), vec![0.0; n], vec![0.0; n]).unwrap();
        assert!((ate_aipw(&y, &a, &zero) - ate_ipw(&y, &a, &pi)).abs() < 1e-12);
        let mu0: Vec<f64> = (0..n).map(|_| r.random()).collect();
        let mu1: Vec<f64> = (0..n).map(|_| r.random()).collect();
        let yfit: Vec<f64> = (0..n).map(|i| if a[i] == 1 { mu1[i] } else { mu0[i] }).collect();
        let nf = NuisanceFit::from_values(pi, mu0.clone(), mu1.clone()).unwrap();
        assert!((ate_aipw(&yfit, &a, &nf) - ate_gcomp(&mu0, &mu1)).abs() < 1e-12);
    }

    #[test]
    fn propensity_is_clipped_and_counted() {
        let nf = NuisanceFit::from_values(vec![0.001, 0.5, 0.999], vec![0.0; 3], vec![0.0; 3]).unwrap();
        assert_eq!(nf.pi_hat, vec![0.025, 0.5, 0.975]);
        assert_eq!(nf.clip_count, 2);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(2000))]
        #[test]
        fn dr_formulas_are_equivalent(
            y in -50.0..50.0f64,
            a in 0u8..=1,
            pi in PROPENSITY_LOWER..=PROPENSITY_UPPER,
            mu0 in -50.0..50.0f64,
            mu1 in -50.0..50.0f64,
        ) {
            prop_assert!((dr1_value(y, a, pi, mu0, mu1) - dr2_value(y, a, pi, mu0, mu1)).abs() < 1e-10);
        }

        #[test]
        fn zero_outcome_models_reduce_dr_to_ipw(y in -50.0..50.0f64, a in 0u8..=1, pi in PROPENSITY_LOWER..=PROPENSITY_UPPER) {
            prop_assert!((dr1_value(y, a, pi, 0.0, 0.0) - ipw_weight(a, pi) * y).abs() < 1e-12);
        }

        #[test]
        fn mean_pseudo_outcomes_match_ate_estimators(seed in 0u64..1000) {
            let mut r = rng::stream(seed, &[]);
            let n = 200;
            let y: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut r)).collect();
            let a: Vec<u8> = (0..n).map(|_| u8::from(r.random::<bool>())).collect();
            let pi: Vec<f64> = (0..n).map(|_| r.random_range(0.0..1.0)).collect();
            let mu0: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut r)).collect();
            let mu1: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut r)).collect();
            let nf = NuisanceFit::from_values(pi, mu0, mu1).unwrap();
            let dr = pseudo_outcome_dr(&y, &a, &nf, DrFormula::Dr1);
            let ipw = pseudo_outcome_ipw(&y, &a, &nf.pi_hat);
            prop_assert!((dr.psi.iter().sum::<f64>() / n as f64 - ate_aipw(&y, &a, &nf)).abs() < 1e-12);
            prop_assert!((ipw.psi.iter().sum::<f64>() / n as f64 - ate_ipw(&y, &a, &nf.pi_hat)).abs() < 1e-12);
        }
    }

    #[test]
    fn double_robustness_with_wrong_outcome_models() {
        // oracle propensity, outcome models fixed at zero
        let reps = 200;
        let truth = 1.0;
        let est: Vec<f64> = (0..reps)
            .map(|s| {
                let d = simulate(200, 0.5, 1.0, 1000 + s);
                let nf = NuisanceFit::from_values(vec![0.5; 200], vec![0.0; 200], vec![0.0; 200]).unwrap();
                let psi = pseudo_outcome_dr(&d.outcome, &d.treatment, &nf, DrFormula::Dr1);
                psi.psi.iter().sum::<f64>() / 200.0
            })
            .collect();
        let m = crate::stats::mean(&est);
        let se = crate::stats::standard_error(&est);
        assert!((m - truth).abs() < 3.0 * se, "mean {m}, se {se}");
    }

    #[test]
    fn crossfit_provenance_identity_and_determinism() {
        let d = simulate(200, 1.0, 0.0, 7);
        let params = CrossfitParams {
            companions: true,
            ..Default::default()
        };
        let out = dr_learner_crossfit(&d, &StackingParams::linear_only(), &params, 3).unwrap();
        assert!(out.nuisance.crossfit_hygiene_ok());
        let mean_psi = out.psi.psi.iter().sum::<f64>() / 200.0;
        assert!((mean_psi - ate_aipw(&d.outcome, &d.treatment, &out.nuisance)).abs() < 1e-12);
        let again = dr_learner_crossfit(&d, &StackingParams::linear_only(), &params, 3).unwrap();
        assert_eq!(out, again);
        assert!(out.ipw_tau.is_some() && out.t_tau.is_some());
        assert_eq!(out.tau.folds, Some(5));
    }

    #[test]
    fn hygiene_check_detects_leakage() {
        let d = simulate(200, 1.0, 0.0, 8);
        let mut out = dr_learner_crossfit(&d, &StackingParams::linear_only(), &CrossfitParams::default(), 1).unwrap();
        let i = out.nuisance.trained_on[0][0];
        out.nuisance.produced_by[i] = 0;
        assert!(!out.nuisance.crossfit_hygiene_ok());
    }

    #[test]
    fn homogeneous_effect_is_recovered() {
        let mut means = Vec::new();
        for s in 0..20 {
            let d = simulate(200, 1.0, 0.0, 100 + s);
            let out = dr_learner_crossfit(&d, &StackingParams::linear_only(), &CrossfitParams::default(), s).unwrap();
            let tau = &out.tau.tau_hat;
            let var_tau = crate::stats::population_variance(tau);
            assert!(var_tau < 0.25 * crate::stats::population_variance(&d.outcome));
            means.push(crate::stats::mean(tau));
        }
        let m = crate::stats::mean(&means);
        assert!((m - 1.0).abs() < 3.0 * crate::stats::standard_error(&means) + 0.05, "mean {m}");
    }

    #[test]
    fn small_folds_are_rejected() {
        let d = simulate(150, 1.0, 0.0, 9);
        let err = dr_learner_crossfit(&d, &StackingParams::linear_only(), &CrossfitParams::default(), 1).unwrap_err();
        assert!(err.to_string().contains("per arm"), "{err}");
    }

    #[test]
    fn fixed_randomization_uses_treated_fraction() {
        let d = simulate(200, 1.0, 0.0, 10);
        let params = CrossfitParams {
            propensity: PropensityMode::FixedRandomization,
            ..Default::default()
        };
        let out = dr_learner_crossfit(&d, &StackingParams::linear_only(), &params, 1).unwrap();
        assert!(out.nuisance.pi_hat.iter().all(|&p| p == 0.5));
    }

    #[test]
    fn s_and_t_learners_recover_additive_effect() {
        let d = simulate(400, 2.0, 0.0, 11);
        let t = cate_t_learner(&d, &StackingParams::linear_only(), 1).unwrap();
        let m = crate::stats::mean(&t.tau_hat);
        assert!((m - 2.0).abs() < 0.3, "T-learner mean {m}");
        // the penalized treatment coefficient is shrunk toward zero
        let s = cate_s_learner(&d, &StackingParams::linear_only(), 1).unwrap();
        let m = crate::stats::mean(&s.tau_hat);
        assert!(m > 1.2 && m <= 2.3, "S-learner mean {m}");
        let a = cate_s_learner(&d, &StackingParams::linear_only(), 5).unwrap();
        let b = cate_s_learner(&d, &StackingParams::linear_only(), 5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn s_learner_without_effect_is_near_zero() {
        let d = simulate(400, 0.0, 0.0, 12);
        let est = cate_s_learner(&d, &StackingParams::linear_only(), 1).unwrap();
        assert!(crate::stats::mean(&est.tau_hat).abs() < 0.3);
    }

    #[test]
    fn t_learner_requires_twenty_per_arm() {
        let d = simulate(30, 1.0, 0.0, 13);
        assert!(matches!(cate_t_learner(&d, &StackingParams::linear_only(), 1), Err(Error::Fit(_))));
    }
}
