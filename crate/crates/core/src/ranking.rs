//! Effect-modifier ranking by out-of-bag permutation importance of a
//! conditional inference forest fitted to pseudo-outcomes.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Covariates;
use crate::error::{Error, Result};
use crate::learners::{fit_conditional_forest, ConditionalForest, ForestParams};
use crate::metalearners::{CateEstimate, CateSource};
use crate::rng::{self, TAG_IMPORTANCE};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RankingParams {
    pub ntree: usize,
    pub mtry: Option<usize>,
    pub subsample_fraction: f64,
    /// Splits are not gated by the selection test unless lowered below 1.
    pub alpha_split: f64,
    pub min_node: Option<usize>,
    pub min_bucket: usize,
    pub n_perm_repeats: usize,
}

impl Default for RankingParams {
    fn default() -> Self {
        let f = ForestParams::default();
        RankingParams {
            ntree: f.ntree,
            mtry: f.mtry,
            subsample_fraction: f.subsample_fraction,
            alpha_split: 1.0,
            min_node: f.min_node,
            min_bucket: f.min_bucket,
            n_perm_repeats: 5,
        }
    }
}

impl RankingParams {
    pub fn forest_params(&self) -> ForestParams {
        ForestParams {
            ntree: self.ntree,
            mtry: self.mtry,
            subsample_fraction: self.subsample_fraction,
            alpha_split: self.alpha_split,
            min_node: self.min_node,
            min_bucket: self.min_bucket,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceRanking {
    pub covariates: Vec<String>,
    /// Mean increase in out-of-bag squared error after permuting the covariate.
    pub scores: Vec<f64>,
    /// 1-based rank of each covariate (1 = most important).
    pub rank: Vec<usize>,
    /// Covariate indices from most to least important.
    pub order: Vec<usize>,
    pub n_perm_repeats: usize,
    /// Every tree was a single leaf, so all scores are zero.
    pub degenerate: bool,
}

impl ImportanceRanking {
    pub fn top(&self) -> usize {
        self.order[0]
    }

    fn from_scores(covariates: Vec<String>, scores: Vec<f64>, n_perm_repeats: usize, degenerate: bool) -> Self {
        let mut order: Vec<usize> = (0..scores.len()).collect();
        // stable: equal scores keep covariate order
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
        let mut rank = vec![0; scores.len()];
        for (pos, &j) in order.iter().enumerate() {
            rank[j] = pos + 1;
        }
        ImportanceRanking {
            covariates,
            scores,
            rank,
            order,
            n_perm_repeats,
            degenerate,
        }
    }
}

/// Fits the ranking forest on `(x, psi)` and scores every covariate.
pub fn rank_effect_modifiers(
    x: &Covariates,
    psi: &[f64],
    params: &RankingParams,
    seed: u64,
) -> Result<(ImportanceRanking, ConditionalForest)> {
    if params.n_perm_repeats == 0 {
        return Err(Error::param("n_perm_repeats must be positive"));
    }
    let forest = fit_conditional_forest(x, psi, &params.forest_params(), seed)?;
    let ranking = permutation_importance(&forest, x, psi, params.n_perm_repeats, seed);
    Ok((ranking, forest))
}

/// Marginal permutation importance over each tree's out-of-bag rows.
pub fn permutation_importance(
    forest: &ConditionalForest,
    x: &Covariates,
    psi: &[f64],
    repeats: usize,
    seed: u64,
) -> ImportanceRanking {
    let p = x.p();
    let names = x.names();
    if forest.all_single_leaf() {
        return ImportanceRanking::from_scores(names, vec![0.0; p], repeats, true);
    }
    let per_tree: Vec<Option<Vec<f64>>> = forest
        .trees
        .par_iter()
        .zip(forest.oob_mask.par_iter())
        .enumerate()
        .map(|(t, (tree, mask))| {
            let oob: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
            if oob.is_empty() {
                return None;
            }
            let base_pred: Vec<f64> = oob.iter().map(|&i| tree.predict_row(x, i, None)).collect();
            let risk = |pred: &[f64]| -> f64 {
                oob.iter().zip(pred).map(|(&i, f)| (psi[i] - f).powi(2)).sum::<f64>() / oob.len() as f64
            };
            let base = risk(&base_pred);
            let mut scores = vec![0.0; p];
            // covariates the tree never splits on keep score 0 exactly
            for j in tree.split_covariates() {
                let mut total = 0.0;
                for r in 0..repeats {
                    let mut rs = rng::stream(seed, &[TAG_IMPORTANCE, t as u64, j as u64, r as u64]);
                    let mut donor = oob.clone();
                    donor.shuffle(&mut rs);
                    let pred: Vec<f64> = oob
                        .iter()
                        .zip(&donor)
                        .map(|(&i, &d)| tree.predict_row(x, i, Some((j, d))))
                        .collect();
                    total += risk(&pred) - base;
                }
                scores[j] = total / repeats as f64;
            }
            Some(scores)
        })
        .collect();
    let mut sums = vec![0.0; p];
    let mut used = 0usize;
    for s in per_tree.into_iter().flatten() {
        used += 1;
        sums.iter_mut().zip(&s).for_each(|(a, b)| *a += b);
    }
    let scores = sums.into_iter().map(|s| if used > 0 { s / used as f64 } else { 0.0 }).collect();
    ImportanceRanking::from_scores(names, scores, repeats, false)
}

/// CATE from out-of-bag predictions of the ranking forest. Also returns the
/// number of rows that fell back to the full-forest prediction.
pub fn cate_oob(forest: &ConditionalForest, x_train: &Covariates) -> Result<(CateEstimate, usize)> {
    let oob = forest.predict_oob(x_train)?;
    let fallback = oob.fallback_count();
    Ok((
        CateEstimate {
            tau_hat: oob.values,
            source: CateSource::OobCforest,
            folds: None,
        },
        fallback,
    ))
}
