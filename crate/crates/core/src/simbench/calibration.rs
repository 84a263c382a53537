//! Monte Carlo calibration of the prognostic scale `s`, the interaction size
//! `β1*` and the main effect `β0(β1)`.
//!
//! Both power searches reuse one set of null replicates. Adding `A·(β0 + β1·f_pred)`
//! to `y` shifts the OLS coefficients on the `A` and `A·f_pred` columns by exactly
//! `(β0, β1)` and leaves the residuals untouched, so the interaction z-statistic is
//! `(b_r + β1)/se_r`. The two-sample statistic is likewise affine in `β0`.

use nalgebra::{Matrix4, Vector4};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, TAG_SIM};
use crate::stats::{mean, normal_quantile, population_variance};

use super::covariates::CovariateModel;
use super::scenarios::{check_id, predictive, prognostic, randomize_treatment, ScenarioSpec};
use rand_distr::{Distribution, StandardNormal};

pub const DEFAULT_TARGET_R2: f64 = 0.32;
pub const S_CALIBRATION_N: usize = 100_000;
pub const DEFAULT_CALIBRATION_REPS: usize = 20_000;
pub const INTERACTION_POWER: f64 = 0.8;
pub const INTERACTION_ALPHA: f64 = 0.1;
pub const OVERALL_POWER: f64 = 0.5;
pub const OVERALL_ALPHA: f64 = 0.05;
pub const GRID_MULTIPLIERS: [f64; 5] = [0.0, 0.5, 1.0, 1.5, 2.0];

// sub-stream labels under TAG_SIM
const SIM_S: u64 = 1;
const SIM_BETA: u64 = 2;

/// Scale giving the target control-arm R² when the noise variance is 1.
pub fn calibrate_s(id: u8, target_r2: f64, model: &CovariateModel, seed: u64) -> Result<f64> {
    check_id(id)?;
    if !(0.0..1.0).contains(&target_r2) {
        return Err(Error::param("target R² must lie in [0, 1)"));
    }
    if target_r2 == 0.0 {
        return Ok(0.0);
    }
    let x = model.generate(S_CALIBRATION_N, &mut rng::stream(seed, &[TAG_SIM, SIM_S, u64::from(id)]))?;
    let sd = population_variance(&prognostic(id, &x)?).sqrt();
    scale_for_sd(target_r2, sd)
}

pub(crate) fn scale_for_sd(target_r2: f64, sd: f64) -> Result<f64> {
    if sd <= 0.0 {
        return Err(Error::param("prognostic function has zero variance"));
    }
    Ok((target_r2 / (1.0 - target_r2)).sqrt() / sd)
}

/// Per-replicate sufficient quantities from a null dataset (β0 = β1 = 0).
#[derive(Debug, Clone, Copy)]
struct NullReplicate {
    /// OLS coefficient and standard error of `A·f_pred` in `y ~ 1 + f_prog + A + A·f_pred`.
    b: f64,
    se: f64,
    /// Arm means and variances of the null outcome and of `f_pred` in the treated arm.
    diff0: f64,
    mean_pred1: f64,
    var_y1: f64,
    cov_y1_pred: f64,
    var_pred1: f64,
    var_y0: f64,
    n1: f64,
    n0: f64,
}

impl NullReplicate {
    fn interaction_rejects(&self, beta1: f64, z: f64) -> bool {
        ((self.b + beta1) / self.se).abs() > z
    }

    fn overall_stat(&self, beta0: f64, beta1: f64) -> (f64, f64) {
        let d = self.diff0 + beta0 + beta1 * self.mean_pred1;
        let v1 = self.var_y1 + 2.0 * beta1 * self.cov_y1_pred + beta1 * beta1 * self.var_pred1;
        (d, (v1 / self.n1 + self.var_y0 / self.n0).sqrt())
    }
}

fn null_replicate(id: u8, s: f64, n: usize, model: &CovariateModel, seed: u64, r: usize) -> Result<NullReplicate> {
    let mut g = rng::stream(seed, &[TAG_SIM, SIM_BETA, u64::from(id), r as u64]);
    let x = model.generate(n, &mut g)?;
    let a = randomize_treatment(n, &mut g);
    let prog = prognostic(id, &x)?;
    let pred = predictive(id, &x)?;
    let y: Vec<f64> = prog
        .iter()
        .map(|&f| {
            let e: f64 = StandardNormal.sample(&mut g);
            s * f + e
        })
        .collect();

    let mut xtx = Matrix4::<f64>::zeros();
    let mut xty = Vector4::<f64>::zeros();
    for i in 0..n {
        let ai = f64::from(a[i]);
        let row = Vector4::new(1.0, prog[i], ai, ai * pred[i]);
        xtx += row * row.transpose();
        xty += row * y[i];
    }
    let inv = xtx
        .try_inverse()
        .ok_or_else(|| Error::Identifiability("calibration design is singular".into()))?;
    let coef = inv * xty;
    let rss: f64 = (0..n)
        .map(|i| {
            let ai = f64::from(a[i]);
            let fit = coef[0] + coef[1] * prog[i] + coef[2] * ai + coef[3] * ai * pred[i];
            (y[i] - fit).powi(2)
        })
        .sum();
    let sigma2 = rss / (n - 4) as f64;
    let se = (sigma2 * inv[(3, 3)]).sqrt();

    let (mut y1, mut p1, mut y0) = (Vec::new(), Vec::new(), Vec::new());
    for i in 0..n {
        if a[i] == 1 {
            y1.push(y[i]);
            p1.push(pred[i]);
        } else {
            y0.push(y[i]);
        }
    }
    let (my1, mp1) = (mean(&y1), mean(&p1));
    let n1 = y1.len() as f64;
    let cov = y1.iter().zip(&p1).map(|(u, v)| (u - my1) * (v - mp1)).sum::<f64>() / (n1 - 1.0);
    Ok(NullReplicate {
        b: coef[3],
        se,
        diff0: my1 - mean(&y0),
        mean_pred1: mp1,
        var_y1: crate::stats::sample_variance(&y1),
        cov_y1_pred: cov,
        var_pred1: crate::stats::sample_variance(&p1),
        var_y0: crate::stats::sample_variance(&y0),
        n1,
        n0: y0.len() as f64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub multiplier: f64,
    pub beta1: f64,
    pub beta0: f64,
    /// Calibration-sample power of the overall two-sample test.
    pub overall_power: f64,
    /// Calibration-sample power of the oracle interaction test.
    pub interaction_power: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub scenario: u8,
    pub s: f64,
    pub target_r2: f64,
    pub n: usize,
    pub beta1_star: f64,
    pub grid: Vec<GridPoint>,
    pub replicates: usize,
    pub s_monte_carlo_n: usize,
    pub seed: u64,
    pub interaction_alpha: f64,
    pub interaction_power_target: f64,
    pub overall_alpha: f64,
    pub overall_power_target: f64,
    pub note: String,
}

impl Calibration {
    pub fn spec(&self, grid_index: usize) -> ScenarioSpec {
        let g = &self.grid[grid_index];
        ScenarioSpec {
            id: self.scenario,
            s: self.s,
            beta0: g.beta0,
            beta1: g.beta1,
            n: self.n,
        }
    }

    pub fn grid_index(&self, multiplier: f64) -> Option<usize> {
        self.grid.iter().position(|g| (g.multiplier - multiplier).abs() < 1e-12)
    }
}

pub const CALIBRATION_NOTE: &str = "calibrated under the built-in Gaussian-copula covariate model; \
     s and beta1_star are not comparable in absolute terms to values obtained under other covariate distributions";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CalibrationParams {
    pub target_r2: f64,
    pub replicates: usize,
    pub multipliers: Vec<f64>,
}

impl Default for CalibrationParams {
    fn default() -> Self {
        CalibrationParams {
            target_r2: DEFAULT_TARGET_R2,
            replicates: DEFAULT_CALIBRATION_REPS,
            multipliers: GRID_MULTIPLIERS.to_vec(),
        }
    }
}

fn rate(reps: &[NullReplicate], f: impl Fn(&NullReplicate) -> bool) -> f64 {
    reps.iter().filter(|r| f(r)).count() as f64 / reps.len() as f64
}

/// Finds `x` in `[lo, hi]` where increasing `power(x)` crosses `target`,
/// widening `hi` while the bracket fails.
fn bisect(power: impl Fn(f64) -> f64, target: f64, lo: f64, mut hi: f64) -> Result<f64> {
    let mut widen = 0;
    while power(hi) < target {
        hi = lo + 2.0 * (hi - lo);
        widen += 1;
        if widen > 60 {
            return Err(Error::Fit(format!("power target {target} unreachable")));
        }
    }
    let mut lo = lo;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if power(mid) >= target {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= 1e-12 * hi.abs().max(1.0) {
            break;
        }
    }
    Ok(hi)
}

/// Calibrates `s`, `β1*` and the `β0` table over the multiplier grid for trials of size `n`.
pub fn calibrate(id: u8, n: usize, params: &CalibrationParams, model: &CovariateModel, seed: u64) -> Result<Calibration> {
    check_id(id)?;
    if params.replicates < 100 {
        return Err(Error::param("calibration needs at least 100 replicates"));
    }
    if n < 10 {
        return Err(Error::param("calibration sample size must be at least 10"));
    }
    let s = calibrate_s(id, params.target_r2, model, seed)?;
    let reps: Vec<NullReplicate> = (0..params.replicates)
        .into_par_iter()
        .map(|r| null_replicate(id, s, n, model, seed, r))
        .collect::<Result<_>>()?;

    let z_int = normal_quantile(1.0 - INTERACTION_ALPHA / 2.0);
    let int_power = |b1: f64| rate(&reps, |r| r.interaction_rejects(b1, z_int));
    let se_scale = mean(&reps.iter().map(|r| r.se).collect::<Vec<_>>());
    let beta1_star = bisect(int_power, INTERACTION_POWER, 0.0, 4.0 * se_scale)?;

    let z_all = normal_quantile(1.0 - OVERALL_ALPHA / 2.0);
    let mut grid = Vec::with_capacity(params.multipliers.len());
    for &m in &params.multipliers {
        let beta1 = m * beta1_star;
        // Work on the branch with a positive total effect: start where the
        // average difference vanishes and move β0 upward.
        let centre = -mean(&reps.iter().map(|r| r.overall_stat(0.0, beta1).0).collect::<Vec<_>>());
        let scale = mean(&reps.iter().map(|r| r.overall_stat(0.0, beta1).1).collect::<Vec<_>>());
        let overall = |b0: f64| {
            rate(&reps, |r| {
                let (d, se) = r.overall_stat(b0, beta1);
                (d / se).abs() > z_all
            })
        };
        let beta0 = bisect(overall, OVERALL_POWER, centre, centre + 4.0 * scale)?;
        grid.push(GridPoint {
            multiplier: m,
            beta1,
            beta0,
            overall_power: overall(beta0),
            interaction_power: int_power(beta1),
        });
    }
    Ok(Calibration {
        scenario: id,
        s,
        target_r2: params.target_r2,
        n,
        beta1_star,
        grid,
        replicates: params.replicates,
        s_monte_carlo_n: S_CALIBRATION_N,
        seed,
        interaction_alpha: INTERACTION_ALPHA,
        interaction_power_target: INTERACTION_POWER,
        overall_alpha: OVERALL_ALPHA,
        overall_power_target: OVERALL_POWER,
        note: CALIBRATION_NOTE.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_target_gives_zero_scale() {
        assert_eq!(calibrate_s(1, 0.0, &CovariateModel::default(), 1).unwrap(), 0.0);
    }

    #[test]
    fn scale_is_inverse_in_sd() {
        let a = scale_for_sd(0.32, 0.4).unwrap();
        let b = scale_for_sd(0.32, 0.8).unwrap();
        assert!((a - 2.0 * b).abs() < 1e-14);
        assert!(scale_for_sd(0.32, 0.0).is_err());
    }

    #[test]
    fn scale_hits_target_r2() {
        let model = CovariateModel::default();
        for id in 1..=4 {
            let s = calibrate_s(id, 0.32, &model, 11).unwrap();
            // fresh sample: R² = s²v / (s²v + 1)
            let x = model.generate(50_000, &mut rng::stream(99, &[u64::from(id)])).unwrap();
            let v = population_variance(&prognostic(id, &x).unwrap());
            let r2 = s * s * v / (s * s * v + 1.0);
            assert!((r2 - 0.32).abs() < 0.01, "scenario {id}: {r2}");
            assert!(s > 0.5 && s < 5.0, "scenario {id}: s = {s}");
        }
    }

    #[test]
    fn shortcut_matches_direct_fit() {
        // the shifted statistics equal a refit on data with the effect added
        let model = CovariateModel::default();
        let (id, s, n, b0, b1) = (2u8, 1.2, 120usize, 0.3, 0.7);
        let rep = null_replicate(id, s, n, &model, 5, 0).unwrap();
        let mut g = rng::stream(5, &[TAG_SIM, SIM_BETA, u64::from(id), 0]);
        let x = model.generate(n, &mut g).unwrap();
        let a = randomize_treatment(n, &mut g);
        let spec = ScenarioSpec::new(id, s, b0, b1, n).unwrap();
        let (y, _) = super::super::scenarios::scenario_response(&spec, &x, &a, &mut g).unwrap();
        let (y1, y0): (Vec<f64>, Vec<f64>) = {
            let mut t = (Vec::new(), Vec::new());
            for i in 0..n {
                if a[i] == 1 { t.0.push(y[i]) } else { t.1.push(y[i]) }
            }
            t
        };
        let d = mean(&y1) - mean(&y0);
        let se = (crate::stats::sample_variance(&y1) / y1.len() as f64
            + crate::stats::sample_variance(&y0) / y0.len() as f64)
            .sqrt();
        let (d2, se2) = rep.overall_stat(b0, b1);
        assert!((d - d2).abs() < 1e-10);
        assert!((se - se2).abs() < 1e-10);
    }

    #[test]
    fn calibration_targets_and_grid() {
        let model = CovariateModel::default();
        let params = CalibrationParams { replicates: 2000, ..Default::default() };
        let cal = calibrate(2, 200, &params, &model, 3).unwrap();
        assert_eq!(cal.grid.len(), 5);
        assert!(cal.beta1_star > 0.0);
        for g in &cal.grid {
            assert!((g.beta1 - g.multiplier * cal.beta1_star).abs() < 1e-12);
            assert!((g.overall_power - 0.5).abs() < 0.01);
        }
        let star = &cal.grid[cal.grid_index(1.0).unwrap()];
        assert!((star.interaction_power - 0.8).abs() < 0.01);
        assert!(cal.grid[4].interaction_power > star.interaction_power);
        let again = calibrate(2, 200, &params, &model, 3).unwrap();
        assert_eq!(cal, again);
    }
}
