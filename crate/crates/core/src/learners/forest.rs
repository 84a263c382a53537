//! Random forest of conditional inference trees grown on without-replacement
//! subsamples, with out-of-bag bookkeeping.

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ctree::{ConditionalTree, TreeControls};
use crate::data::Covariates;
use crate::error::{Error, Result};
use crate::rng::{self, TAG_TREE};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestParams {
    pub ntree: usize,
    /// Candidate covariates per node; `None` means ⌈√p⌉.
    pub mtry: Option<usize>,
    pub subsample_fraction: f64,
    pub alpha_split: f64,
    /// Smallest node that may be split; `None` means max(20, ⌈0.05·n⌉).
    pub min_node: Option<usize>,
    pub min_bucket: usize,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            ntree: 500,
            mtry: None,
            subsample_fraction: 0.632,
            alpha_split: 0.05,
            min_node: None,
            min_bucket: 7,
        }
    }
}

impl ForestParams {
    pub fn controls(&self, n: usize, p: usize) -> TreeControls {
        TreeControls {
            mtry: self.mtry.unwrap_or_else(|| (p as f64).sqrt().ceil() as usize).clamp(1, p.max(1)),
            alpha_split: self.alpha_split,
            min_node: self.min_node.unwrap_or_else(|| 20.max((0.05 * n as f64).ceil() as usize)),
            min_bucket: self.min_bucket,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.ntree == 0 {
            return Err(Error::param("ntree must be positive"));
        }
        if !(self.subsample_fraction > 0.0 && self.subsample_fraction <= 1.0) {
            return Err(Error::param("subsample_fraction must lie in (0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.alpha_split) {
            return Err(Error::param("alpha_split must lie in [0, 1]"));
        }
        if self.mtry == Some(0) {
            return Err(Error::param("mtry must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalForest {
    pub trees: Vec<ConditionalTree>,
    pub params: ForestParams,
    pub controls_mtry: usize,
    pub controls_min_node: usize,
    /// `oob_mask[t][i]` is true when training row `i` was left out of tree `t`.
    pub oob_mask: Vec<Vec<bool>>,
    pub seed: u64,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OobPrediction {
    pub values: Vec<f64>,
    /// Rows that were in-bag for every tree and got the full-forest prediction.
    pub fallback: Vec<bool>,
}

impl OobPrediction {
    pub fn fallback_count(&self) -> usize {
        self.fallback.iter().filter(|&&f| f).count()
    }
}

pub fn fit_conditional_forest(x: &Covariates, y: &[f64], params: &ForestParams, seed: u64) -> Result<ConditionalForest> {
    params.validate()?;
    let n = x.n();
    if n < 20 {
        return Err(Error::param(format!("forest needs n >= 20, got {n}")));
    }
    if y.len() != n {
        return Err(Error::param("response length differs from covariate rows"));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::param("forest response contains non-finite values"));
    }
    let controls = params.controls(n, x.p());
    let size = ((params.subsample_fraction * n as f64).round() as usize).clamp(1, n);
    let grown: Vec<(ConditionalTree, Vec<bool>)> = (0..params.ntree)
        .into_par_iter()
        .map(|t| {
            let mut r = rng::stream(seed, &[TAG_TREE, t as u64]);
            let mut rows = index::sample(&mut r, n, size).into_vec();
            rows.sort_unstable();
            let mut oob = vec![true; n];
            for &i in &rows {
                oob[i] = false;
            }
            (ConditionalTree::grow(x, y, rows, &controls, &mut r), oob)
        })
        .collect();
    let (trees, oob_mask): (Vec<_>, Vec<_>) = grown.into_iter().unzip();
    let mut warnings = Vec::new();
    let never_oob = (0..n).filter(|&i| oob_mask.iter().all(|m| !m[i])).count();
    if never_oob > 0 && params.ntree >= 50 {
        warnings.push(format!(
            "{never_oob} training rows are out-of-bag in no tree; refit with more trees"
        ));
    }
    Ok(ConditionalForest {
        trees,
        params: params.clone(),
        controls_mtry: controls.mtry,
        controls_min_node: controls.min_node,
        oob_mask,
        seed,
        warnings,
    })
}

impl ConditionalForest {
    pub fn ntree(&self) -> usize {
        self.trees.len()
    }

    pub fn predict(&self, x: &Covariates) -> Vec<f64> {
        let k = self.trees.len() as f64;
        (0..x.n())
            .map(|i| self.trees.iter().map(|t| t.predict_row(x, i, None)).sum::<f64>() / k)
            .collect()
    }

    /// Rows of `x` that meet a categorical level never seen at some split.
    pub fn unseen_level_rows(&self, x: &Covariates) -> usize {
        (0..x.n()).filter(|&i| self.trees.iter().any(|t| t.count_unseen(x, i))).count()
    }

    /// Averages, for each training row, only the trees that did not see it.
    pub fn predict_oob(&self, x_train: &Covariates) -> Result<OobPrediction> {
        let n = x_train.n();
        if self.oob_mask.first().is_some_and(|m| m.len() != n) {
            return Err(Error::param("predict_oob needs the exact training table"));
        }
        let rows: Vec<(f64, bool)> = (0..n)
            .map(|i| {
                let mut sum = 0.0;
                let mut count = 0usize;
                for (t, mask) in self.trees.iter().zip(&self.oob_mask) {
                    if mask[i] {
                        sum += t.predict_row(x_train, i, None);
                        count += 1;
                    }
                }
                if count > 0 {
                    (sum / count as f64, false)
                } else {
                    let all: f64 = self.trees.iter().map(|t| t.predict_row(x_train, i, None)).sum();
                    (all / self.trees.len() as f64, true)
                }
            })
            .collect();
        let (values, fallback) = rows.into_iter().unzip();
        Ok(OobPrediction { values, fallback })
    }

    pub fn all_single_leaf(&self) -> bool {
        self.trees.iter().all(|t| t.is_single_leaf())
    }
}
