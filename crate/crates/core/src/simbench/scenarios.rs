//! The four data-generating models `y = s·f_prog(x) + A(β0 + β1·f_pred(x)) + ε`.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{ColumnData, Covariates};
use crate::error::{Error, Result};
use crate::stats::normal_cdf;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub id: u8,
    pub s: f64,
    pub beta0: f64,
    pub beta1: f64,
    pub n: usize,
}

impl ScenarioSpec {
    pub fn new(id: u8, s: f64, beta0: f64, beta1: f64, n: usize) -> Result<Self> {
        check_id(id)?;
        if !(s >= 0.0 && s.is_finite()) {
            return Err(Error::param("scaling factor s must be finite and non-negative"));
        }
        Ok(ScenarioSpec { id, s, beta0, beta1, n })
    }
}

pub(crate) fn check_id(id: u8) -> Result<()> {
    if (1..=4).contains(&id) {
        Ok(())
    } else {
        Err(Error::param(format!("scenario id must be in 1..=4, got {id}")))
    }
}

/// Covariates whose interaction with treatment drives heterogeneity.
pub fn truth_set(id: u8) -> &'static [&'static str] {
    match id {
        1 => &["X11"],
        2 => &["X14"],
        3 => &["X14", "X1"],
        4 => &["X14", "X4"],
        _ => &[],
    }
}

fn numeric<'a>(x: &'a Covariates, name: &str) -> Result<&'a [f64]> {
    let j = x
        .index_of(name)
        .ok_or_else(|| Error::param(format!("scenario needs covariate {name}")))?;
    match &x.column(j).data {
        ColumnData::Numeric(v) => Ok(v),
        ColumnData::Categorical { .. } => Err(Error::param(format!("covariate {name} must be numeric"))),
    }
}

/// Indicator of `name == level` for a categorical covariate.
fn is_level(x: &Covariates, name: &str, level: &str) -> Result<Vec<f64>> {
    let j = x
        .index_of(name)
        .ok_or_else(|| Error::param(format!("scenario needs covariate {name}")))?;
    match &x.column(j).data {
        ColumnData::Categorical { codes, levels } => {
            let target = levels.iter().position(|l| l == level).map(|k| k as u32);
            Ok(codes.iter().map(|&c| f64::from(u8::from(Some(c) == target))).collect())
        }
        ColumnData::Numeric(_) => Err(Error::param(format!("covariate {name} must be categorical"))),
    }
}

fn indicator(b: bool) -> f64 {
    f64::from(u8::from(b))
}

/// Prognostic function at unit scale.
pub fn prognostic(id: u8, x: &Covariates) -> Result<Vec<f64>> {
    check_id(id)?;
    Ok(match id {
        1 => {
            let x1y = is_level(x, "X1", "Y")?;
            let x11 = numeric(x, "X11")?;
            x1y.iter().zip(x11).map(|(a, b)| 0.5 * a + b).collect()
        }
        2 => {
            let x14 = numeric(x, "X14")?;
            let x8n = is_level(x, "X8", "N")?;
            x14.iter().zip(&x8n).map(|(a, b)| a - b).collect()
        }
        3 => {
            let x1n = is_level(x, "X1", "N")?;
            let x17 = numeric(x, "X17")?;
            x1n.iter().zip(x17).map(|(a, b)| a - 0.5 * b).collect()
        }
        _ => {
            let x11 = numeric(x, "X11")?;
            let x14 = numeric(x, "X14")?;
            x11.iter().zip(x14).map(|(a, b)| a - b).collect()
        }
    })
}

/// Predictive function multiplying β1.
pub fn predictive(id: u8, x: &Covariates) -> Result<Vec<f64>> {
    check_id(id)?;
    Ok(match id {
        1 => numeric(x, "X11")?.iter().map(|&v| normal_cdf(20.0 * (v - 0.5))).collect(),
        2 => numeric(x, "X14")?.to_vec(),
        3 => {
            let x14 = numeric(x, "X14")?;
            let x1n = is_level(x, "X1", "N")?;
            x14.iter().zip(&x1n).map(|(&a, &b)| indicator(a > 0.25 && b == 1.0)).collect()
        }
        _ => {
            let x14 = numeric(x, "X14")?;
            let x4y = is_level(x, "X4", "Y")?;
            x14.iter().zip(&x4y).map(|(&a, &b)| indicator(a > 0.3 || b == 1.0)).collect()
        }
    })
}

/// Oracle CATE `β0 + β1·f_pred(x)`.
pub fn oracle_tau(spec: &ScenarioSpec, x: &Covariates) -> Result<Vec<f64>> {
    Ok(predictive(spec.id, x)?
        .into_iter()
        .map(|f| spec.beta0 + spec.beta1 * f)
        .collect())
}

/// Noise-free mean response.
pub fn mean_response(spec: &ScenarioSpec, x: &Covariates, a: &[u8]) -> Result<Vec<f64>> {
    if a.len() != x.n() {
        return Err(Error::param("treatment length differs from covariates"));
    }
    let prog = prognostic(spec.id, x)?;
    let tau = oracle_tau(spec, x)?;
    Ok(prog
        .iter()
        .zip(&tau)
        .zip(a)
        .map(|((&f, &t), &ai)| spec.s * f + f64::from(ai) * t)
        .collect())
}

/// Simulated outcome and the oracle CATE.
pub fn scenario_response<R: Rng>(
    spec: &ScenarioSpec,
    x: &Covariates,
    a: &[u8],
    rng: &mut R,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut y = mean_response(spec, x, a)?;
    for v in &mut y {
        let e: f64 = StandardNormal.sample(rng);
        *v += e;
    }
    Ok((y, oracle_tau(spec, x)?))
}

/// Complete randomization: exactly `n / 2` treated, in random positions.
pub fn randomize_treatment<R: Rng>(n: usize, rng: &mut R) -> Vec<u8> {
    let mut a: Vec<u8> = (0..n).map(|i| u8::from(i < n / 2)).collect();
    a.shuffle(rng);
    a
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::CovariateColumn;
    use crate::rng;
    use crate::simbench::CovariateModel;

    fn yn(name: &str, codes: Vec<u32>) -> CovariateColumn {
        CovariateColumn::categorical(name, codes, vec!["N".into(), "Y".into()])
    }

    fn hand_rows() -> Covariates {
        // two rows; only the columns the scenarios touch
        Covariates::new(vec![
            yn("X1", vec![1, 0]),
            yn("X4", vec![0, 1]),
            yn("X8", vec![0, 1]),
            CovariateColumn::numeric("X11", vec![0.5, 0.8]),
            CovariateColumn::numeric("X14", vec![1.0, 0.2]),
            CovariateColumn::numeric("X17", vec![0.4, 0.6]),
        ])
        .unwrap()
    }

    #[test]
    fn scenario_two_hand_value() {
        let x = hand_rows();
        let spec = ScenarioSpec::new(2, 1.42, 0.3, 0.5, 2).unwrap();
        let m = mean_response(&spec, &x, &[1, 0]).unwrap();
        assert!((m[0] - 0.8).abs() < 1e-12);
        // row 2: X14 = 0.2, X8 = Y, control
        assert!((m[1] - 1.42 * 0.2).abs() < 1e-12);
    }

    #[test]
    fn all_rows_by_hand() {
        let x = hand_rows();
        let (b0, b1, s) = (0.1, 2.0, 1.5);
        let expect: [(u8, [f64; 2], [f64; 2]); 4] = [
            (1, [0.5 + 0.5, 0.8], [0.5, normal_cdf(6.0)]),
            (2, [1.0 - 1.0, 0.2], [1.0, 0.2]),
            (3, [0.0 - 0.2, 1.0 - 0.3], [0.0, 0.0]),
            (4, [0.5 - 1.0, 0.8 - 0.2], [1.0, 1.0]),
        ];
        for (id, prog, pred) in expect {
            let spec = ScenarioSpec::new(id, s, b0, b1, 2).unwrap();
            let m = mean_response(&spec, &x, &[1, 1]).unwrap();
            for i in 0..2 {
                let want = s * prog[i] + b0 + b1 * pred[i];
                assert!((m[i] - want).abs() < 1e-12, "scenario {id} row {i}: {} vs {want}", m[i]);
            }
        }
        // AND vs OR: X14 > 0.25 with X1 = N, and X14 <= 0.3 with X4 = Y
        let x2 = Covariates::new(vec![
            yn("X1", vec![0, 0]),
            yn("X4", vec![1, 0]),
            CovariateColumn::numeric("X14", vec![0.3, 0.26]),
        ])
        .unwrap();
        assert_eq!(predictive(3, &x2).unwrap(), vec![1.0, 1.0]);
        assert_eq!(predictive(4, &x2).unwrap(), vec![1.0, 0.0]);
    }

    #[test]
    fn oracle_tau_is_arm_difference() {
        let model = CovariateModel::default();
        let x = model.generate(200, &mut rng::stream(3, &[])).unwrap();
        for id in 1..=4 {
            let spec = ScenarioSpec::new(id, 1.3, 0.4, 0.9, 200).unwrap();
            let m1 = mean_response(&spec, &x, &vec![1; 200]).unwrap();
            let m0 = mean_response(&spec, &x, &vec![0; 200]).unwrap();
            let tau = oracle_tau(&spec, &x).unwrap();
            for i in 0..200 {
                assert!((m1[i] - m0[i] - tau[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn null_model_is_pure_noise() {
        let model = CovariateModel::default();
        let x = model.generate(2000, &mut rng::stream(5, &[])).unwrap();
        let a = randomize_treatment(2000, &mut rng::stream(5, &[1]));
        let spec = ScenarioSpec::new(1, 0.0, 0.0, 0.0, 2000).unwrap();
        let (y, tau) = scenario_response(&spec, &x, &a, &mut rng::stream(5, &[2])).unwrap();
        assert!(tau.iter().all(|&t| t == 0.0));
        let u: Vec<f64> = y.iter().map(|&v| normal_cdf(v)).collect();
        assert!(crate::stats::ks_uniform_pvalue(&u) > 0.001);
    }

    #[test]
    fn missing_or_mistyped_column_errors() {
        let x = Covariates::new(vec![CovariateColumn::numeric("X14", vec![0.1])]).unwrap();
        assert!(prognostic(2, &x).is_err());
        assert!(predictive(2, &x).is_ok());
        let bad = Covariates::new(vec![CovariateColumn::numeric("X1", vec![0.1]), CovariateColumn::numeric("X11", vec![0.1])]).unwrap();
        assert!(prognostic(1, &bad).is_err());
        assert!(ScenarioSpec::new(5, 1.0, 0.0, 0.0, 10).is_err());
    }

    #[test]
    fn complete_randomization_balances_arms() {
        let a = randomize_treatment(301, &mut rng::stream(1, &[]));
        assert_eq!(a.iter().filter(|&&v| v == 1).count(), 150);
    }
}
