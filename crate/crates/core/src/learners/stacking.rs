//! Stacked generalization: cross-validated member predictions combined with
//! nonnegative least-squares weights normalized onto the simplex.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::forest::{fit_conditional_forest, ConditionalForest, ForestParams};
use super::linear::{fit_penalized_linear, LinearParams, PenalizedLinearModel};
use super::nnls::nnls;
use super::{clip_probability, Family};
use crate::data::{random_folds, stratified_folds, Covariates};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, TAG_STACK};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MemberSpec {
    PenalizedLinear(LinearParams),
    ConditionalForest(ForestParams),
}

impl MemberSpec {
    pub fn name(&self) -> &'static str {
        match self {
            MemberSpec::PenalizedLinear(_) => "penalized_linear",
            MemberSpec::ConditionalForest(_) => "conditional_forest",
        }
    }

    pub fn fit(&self, x: &Covariates, y: &[f64], family: Family, seed: u64) -> Result<FittedMember> {
        Ok(match self {
            MemberSpec::PenalizedLinear(p) => FittedMember::PenalizedLinear(fit_penalized_linear(x, y, family, p, seed)?),
            MemberSpec::ConditionalForest(p) => {
                FittedMember::ConditionalForest(Box::new(fit_conditional_forest(x, y, p, seed)?))
            }
        })
    }
}

/// Ensemble configuration shared by every nuisance and CATE regression.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StackingParams {
    pub members: Vec<MemberSpec>,
    pub cv_folds: usize,
}

impl Default for StackingParams {
    fn default() -> Self {
        StackingParams {
            members: vec![
                MemberSpec::PenalizedLinear(LinearParams::default()),
                MemberSpec::ConditionalForest(ForestParams::default()),
            ],
            cv_folds: 10,
        }
    }
}

impl StackingParams {
    /// Penalized linear member only; much cheaper than the full ensemble.
    pub fn linear_only() -> Self {
        StackingParams {
            members: vec![MemberSpec::PenalizedLinear(LinearParams::default())],
            cv_folds: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FittedMember {
    PenalizedLinear(PenalizedLinearModel),
    ConditionalForest(Box<ConditionalForest>),
}

impl FittedMember {
    pub fn predict(&self, x: &Covariates, family: Family) -> Vec<f64> {
        match self {
            FittedMember::PenalizedLinear(m) => m.predict(x),
            FittedMember::ConditionalForest(f) => {
                let p = f.predict(x);
                match family {
                    Family::Gaussian => p,
                    Family::Binomial => p.into_iter().map(clip_probability).collect(),
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackedModel {
    pub members: Vec<FittedMember>,
    pub weights: Vec<f64>,
    pub family: Family,
    pub cv_folds: usize,
    /// Cross-validated mean squared error per member; absent for a single member.
    pub cv_risk: Option<Vec<f64>>,
}

impl StackedModel {
    pub fn predict(&self, x: &Covariates) -> Vec<f64> {
        let mut out = vec![0.0; x.n()];
        for (m, &w) in self.members.iter().zip(&self.weights) {
            if w == 0.0 {
                continue;
            }
            for (o, v) in out.iter_mut().zip(m.predict(x, self.family)) {
                *o += w * v;
            }
        }
        if self.family == Family::Binomial {
            out.iter_mut().for_each(|v| *v = clip_probability(*v));
        }
        out
    }
}

/// Simplex weights from cross-validated member predictions `z[m][i]`.
/// Returns the weights and whether the all-zero fallback was used.
pub fn stacking_weights(z: &[Vec<f64>], y: &[f64]) -> (Vec<f64>, bool) {
    let m = z.len();
    let n = y.len();
    let a = DMatrix::from_fn(n, m, |i, j| z[j][i]);
    let w = nnls(&a, &DVector::from_column_slice(y));
    let total: f64 = w.iter().sum();
    if total > 0.0 && total.is_finite() {
        (w.iter().map(|v| v / total).collect(), false)
    } else {
        let risk: Vec<f64> = z.iter().map(|p| mse(p, y)).collect();
        let best = (0..m).min_by(|&i, &j| risk[i].total_cmp(&risk[j])).unwrap_or(0);
        ((0..m).map(|j| f64::from(u8::from(j == best))).collect(), true)
    }
}

fn mse(p: &[f64], y: &[f64]) -> f64 {
    p.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / y.len() as f64
}

pub fn fit_stacking(x: &Covariates, y: &[f64], family: Family, params: &StackingParams, seed: u64) -> Result<StackedModel> {
    let n = x.n();
    let members = &params.members;
    if members.is_empty() {
        return Err(Error::param("stacking needs at least one member"));
    }
    if y.len() != n {
        return Err(Error::param("response length differs from covariate rows"));
    }
    let k = params.cv_folds;
    if members.len() == 1 {
        let fitted = members[0].fit(x, y, family, derive_seed(seed, &[TAG_STACK, 0, 0]))?;
        return Ok(StackedModel {
            members: vec![fitted],
            weights: vec![1.0],
            family,
            cv_folds: k,
            cv_risk: None,
        });
    }
    if k < 2 || n < k {
        return Err(Error::param(format!("stacking needs 2 <= cv_folds <= n, got cv_folds={k}, n={n}")));
    }
    let fold_seed = derive_seed(seed, &[TAG_STACK]);
    let fold_of = match family {
        Family::Gaussian => random_folds(n, k, fold_seed),
        Family::Binomial => stratified_folds(y, k, fold_seed),
    };
    let mut z = vec![vec![0.0; n]; members.len()];
    for f in 0..k {
        let train: Vec<usize> = (0..n).filter(|&i| fold_of[i] != f).collect();
        let test: Vec<usize> = (0..n).filter(|&i| fold_of[i] == f).collect();
        let xtr = x.subset(&train);
        let ytr: Vec<f64> = train.iter().map(|&i| y[i]).collect();
        let xte = x.subset(&test);
        for (mi, spec) in members.iter().enumerate() {
            let fitted = spec.fit(&xtr, &ytr, family, derive_seed(seed, &[TAG_STACK, 1 + f as u64, mi as u64]))?;
            for (&i, v) in test.iter().zip(fitted.predict(&xte, family)) {
                z[mi][i] = v;
            }
        }
    }
    let cv_risk: Vec<f64> = z.iter().map(|p| mse(p, y)).collect();
    let (weights, _) = stacking_weights(&z, y);
    let fitted = members
        .iter()
        .enumerate()
        .map(|(mi, spec)| {
            if weights[mi] == 0.0 {
                // zero-weight members are never evaluated; keep them cheap
                return Ok(None);
            }
            spec.fit(x, y, family, derive_seed(seed, &[TAG_STACK, 0, mi as u64])).map(Some)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut kept_members = Vec::new();
    let mut kept_weights = Vec::new();
    for (m, w) in fitted.into_iter().zip(&weights) {
        if let Some(m) = m {
            kept_members.push(m);
            kept_weights.push(*w);
        }
    }
    Ok(StackedModel {
        members: kept_members,
        weights: kept_weights,
        family,
        cv_folds: k,
        cv_risk: Some(cv_risk),
    })
}
