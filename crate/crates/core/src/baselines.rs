//! Linear-model comparison methods: per-covariate interaction likelihood
//! ratio tests (Bonferroni-combined) and a joint all-interactions test.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{encode, Encoding, OutcomeKind, TrialDataset};
use crate::error::{Error, Result};
use crate::stats::{chi2_sf, f_sf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineMethod {
    Univariate,
    Multivariate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineResult {
    pub method: BaselineMethod,
    pub global_p: f64,
    pub per_covariate_p: Vec<f64>,
    pub top_covariate: usize,
    pub tau_hat: Vec<f64>,
    pub warnings: Vec<String>,
}

/// Least-squares or logistic fit on the non-aliased subset of columns.
#[derive(Debug, Clone)]
pub struct GlmFit {
    /// Indices of the columns kept after dropping aliased ones.
    pub kept: Vec<usize>,
    pub beta: Vec<f64>,
    /// Residual sum of squares (gaussian) or deviance (binomial).
    pub loss: f64,
    /// Unscaled inverse information on the kept columns.
    pub cov_unscaled: DMatrix<f64>,
    pub converged: bool,
}

/// Greedy Gram-Schmidt screen: a column is aliased when its residual after
/// projection on the kept columns is negligible relative to its norm.
fn independent_columns(cols: &[Vec<f64>]) -> Vec<usize> {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut kept = Vec::new();
    for (j, c) in cols.iter().enumerate() {
        let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        let mut r = c.clone();
        for b in &basis {
            let d: f64 = r.iter().zip(b).map(|(u, v)| u * v).sum();
            r.iter_mut().zip(b).for_each(|(u, v)| *u -= d * v);
        }
        let rn = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        if rn > 1e-9 * norm {
            r.iter_mut().for_each(|v| *v /= rn);
            basis.push(r);
            kept.push(j);
        }
    }
    kept
}

fn matrix(cols: &[Vec<f64>], kept: &[usize], n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, kept.len(), |i, k| cols[kept[k]][i])
}

fn weighted_solve(x: &DMatrix<f64>, w: &[f64], z: &[f64]) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let xw = DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| x[(i, j)] * w[i]);
    let xtwx = x.transpose() * &xw;
    let chol = xtwx
        .cholesky()
        .ok_or_else(|| Error::Fit("information matrix is not positive definite".into()))?;
    let rhs = xw.transpose() * DVector::from_column_slice(z);
    Ok((chol.solve(&rhs), chol.inverse()))
}

pub fn fit_glm(cols: &[Vec<f64>], y: &[f64], kind: OutcomeKind) -> Result<GlmFit> {
    let n = y.len();
    let kept = independent_columns(cols);
    let x = matrix(cols, &kept, n);
    match kind {
        OutcomeKind::Continuous => {
            let (beta, cov) = weighted_solve(&x, &vec![1.0; n], y)?;
            let fitted = &x * &beta;
            let loss = y.iter().zip(fitted.iter()).map(|(a, b)| (a - b).powi(2)).sum();
            Ok(GlmFit {
                kept,
                beta: beta.iter().copied().collect(),
                loss,
                cov_unscaled: cov,
                converged: true,
            })
        }
        OutcomeKind::Binary => {
            let mut beta = DVector::zeros(kept.len());
            let mut converged = false;
            let mut cov = DMatrix::zeros(kept.len(), kept.len());
            let mut last_dev = f64::INFINITY;
            for _ in 0..50 {
                let eta = &x * &beta;
                let mu: Vec<f64> = eta.iter().map(|e| (1.0 / (1.0 + (-e).exp())).clamp(1e-10, 1.0 - 1e-10)).collect();
                let w: Vec<f64> = mu.iter().map(|m| m * (1.0 - m)).collect();
                let z: Vec<f64> = (0..n).map(|i| eta[i] + (y[i] - mu[i]) / w[i]).collect();
                let (b, c) = weighted_solve(&x, &w, &z)?;
                beta = b;
                cov = c;
                let dev = binomial_deviance(y, &(&x * &beta));
                if (last_dev - dev).abs() < 1e-10 * (dev.abs() + 0.1) {
                    converged = true;
                    break;
                }
                last_dev = dev;
            }
            let loss = binomial_deviance(y, &(&x * &beta));
            Ok(GlmFit {
                kept,
                beta: beta.iter().copied().collect(),
                loss,
                cov_unscaled: cov,
                converged,
            })
        }
    }
}

fn binomial_deviance(y: &[f64], eta: &DVector<f64>) -> f64 {
    y.iter()
        .zip(eta.iter())
        .map(|(&yi, &e)| {
            // −2 log-likelihood in a numerically stable form
            let log1pexp = if e > 0.0 { e + (-e).exp().ln_1p() } else { e.exp().ln_1p() };
            2.0 * (log1pexp - yi * e)
        })
        .sum()
}

/// Likelihood ratio statistic between nested fits.
fn lrt_statistic(reduced: &GlmFit, full: &GlmFit, n: usize, kind: OutcomeKind) -> f64 {
    let s = match kind {
        OutcomeKind::Continuous => n as f64 * (reduced.loss / full.loss).ln(),
        OutcomeKind::Binary => reduced.loss - full.loss,
    };
    s.max(0.0)
}

/// Interaction test of a single covariate: LRT and (gaussian only) exact F p-values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InteractionTest {
    pub lrt_p: f64,
    pub f_p: Option<f64>,
    pub df: usize,
}

struct CovariateModel {
    test: InteractionTest,
    /// τ̂ from the full model.
    tau: Vec<f64>,
}

fn expit(e: f64) -> f64 {
    1.0 / (1.0 + (-e).exp())
}

/// τ̂(x) from a fit whose columns are [1, main..., A, A·d...]; `a_col` and
/// `inter` locate the treatment and interaction columns in the full design.
fn treatment_contrast(
    fit: &GlmFit,
    cols: &[Vec<f64>],
    a_col: usize,
    inter: &[(usize, usize)],
    kind: OutcomeKind,
    n: usize,
) -> Vec<f64> {
    let coef = |c: usize| fit.kept.iter().position(|&k| k == c).map_or(0.0, |pos| fit.beta[pos]);
    let delta: Vec<f64> = (0..n)
        .map(|i| coef(a_col) + inter.iter().map(|&(c, src)| coef(c) * cols[src][i]).sum::<f64>())
        .collect();
    match kind {
        OutcomeKind::Continuous => delta,
        OutcomeKind::Binary => {
            // linear predictor without the treatment terms, row by row
            (0..n)
                .map(|i| {
                    let eta0: f64 = fit
                        .kept
                        .iter()
                        .zip(&fit.beta)
                        .filter(|(k, _)| **k < a_col)
                        .map(|(&k, b)| b * cols[k][i])
                        .sum();
                    expit(eta0 + delta[i]) - expit(eta0)
                })
                .collect()
        }
    }
}

fn univariate_model(data: &TrialDataset, j: usize) -> Result<CovariateModel> {
    let n = data.n();
    let kind = data.outcome_kind;
    let g = encode(&data.covariates, Encoding::Raw);
    let block: Vec<Vec<f64>> = (0..g.q())
        .filter(|&c| g.column_origin[c] == j)
        .map(|c| g.columns.column(c).iter().copied().collect())
        .collect();
    let a = data.treatment_f64();
    let mut cols = vec![vec![1.0; n]];
    cols.extend(block.iter().cloned());
    let a_col = cols.len();
    cols.push(a.clone());
    let reduced = fit_glm(&cols, &data.outcome, kind)?;
    let mut inter = Vec::new();
    for (b, d) in block.iter().enumerate() {
        inter.push((cols.len(), 1 + b));
        cols.push(d.iter().zip(&a).map(|(u, v)| u * v).collect());
    }
    let full = fit_glm(&cols, &data.outcome, kind)?;
    let df = full.kept.len() - reduced.kept.len();
    if df == 0 {
        return Ok(CovariateModel {
            test: InteractionTest { lrt_p: 1.0, f_p: Some(1.0), df },
            tau: treatment_contrast(&full, &cols, a_col, &inter, kind, n),
        });
    }
    let stat = lrt_statistic(&reduced, &full, n, kind);
    let f_p = (kind == OutcomeKind::Continuous).then(|| {
        let resid_df = (n - full.kept.len()) as f64;
        let f = ((reduced.loss - full.loss) / df as f64) / (full.loss / resid_df);
        f_sf(f.max(0.0), df as f64, resid_df)
    });
    Ok(CovariateModel {
        test: InteractionTest {
            lrt_p: chi2_sf(stat, df as f64),
            f_p,
            df,
        },
        tau: treatment_contrast(&full, &cols, a_col, &inter, kind, n),
    })
}

/// Per-covariate interaction test (LRT and F) for covariate `j`.
pub fn interaction_test(data: &TrialDataset, j: usize) -> Result<InteractionTest> {
    Ok(univariate_model(data, j)?.test)
}

fn argmin_first(p: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in p.iter().enumerate() {
        if v < p[best] {
            best = j;
        }
    }
    best
}

/// One interaction LRT per covariate; global p = min p × number of covariates.
pub fn univariate_baseline(data: &TrialDataset) -> Result<BaselineResult> {
    let p = data.p();
    let mut per = Vec::with_capacity(p);
    let mut taus = Vec::with_capacity(p);
    for j in 0..p {
        let m = univariate_model(data, j)?;
        per.push(m.test.lrt_p);
        taus.push(m.tau);
    }
    let top = argmin_first(&per);
    Ok(BaselineResult {
        method: BaselineMethod::Univariate,
        global_p: (per[top] * p as f64).min(1.0),
        per_covariate_p: per,
        top_covariate: top,
        tau_hat: taus.swap_remove(top),
        warnings: Vec::new(),
    })
}

/// Joint LRT of all treatment-covariate interactions.
pub fn multivariate_baseline(data: &TrialDataset) -> Result<BaselineResult> {
    let n = data.n();
    let kind = data.outcome_kind;
    let g = encode(&data.covariates, Encoding::Raw);
    let q = g.q();
    if n <= 2 * q + 2 {
        return Err(Error::Identifiability(format!(
            "the all-interactions model has {} parameters but only {n} observations (need n > 2q + 2 = {})",
            2 * q + 2,
            2 * q + 2
        )));
    }
    let a = data.treatment_f64();
    let mut cols = vec![vec![1.0; n]];
    for c in 0..q {
        cols.push(g.columns.column(c).iter().copied().collect());
    }
    let a_col = cols.len();
    cols.push(a.clone());
    let reduced = fit_glm(&cols, &data.outcome, kind)?;
    let mut inter = Vec::new();
    for c in 0..q {
        inter.push((cols.len(), 1 + c));
        let v: Vec<f64> = cols[1 + c].iter().zip(&a).map(|(u, v)| u * v).collect();
        cols.push(v);
    }
    let full = fit_glm(&cols, &data.outcome, kind)?;
    let mut warnings = Vec::new();
    let aliased: Vec<String> = (0..cols.len())
        .filter(|c| !full.kept.contains(c))
        .map(|c| column_label(c, a_col, &g.column_names))
        .collect();
    if !aliased.is_empty() {
        warnings.push(format!("dropped aliased design columns: {}", aliased.join(", ")));
    }
    if !full.converged {
        warnings.push("logistic fit did not converge".into());
    }
    let df = full.kept.len() - reduced.kept.len();
    let global_p = if df == 0 {
        1.0
    } else {
        chi2_sf(lrt_statistic(&reduced, &full, n, kind), df as f64)
    };
    let resid_df = (n - full.kept.len()) as f64;
    let sigma2 = match kind {
        OutcomeKind::Continuous => full.loss / resid_df,
        OutcomeKind::Binary => 1.0,
    };
    let mut per = Vec::with_capacity(data.p());
    for j in 0..data.p() {
        let positions: Vec<usize> = inter
            .iter()
            .filter(|&&(_, src)| g.column_origin[src - 1] == j)
            .filter_map(|&(c, _)| full.kept.iter().position(|&k| k == c))
            .collect();
        per.push(block_wald_p(&full, &positions, sigma2, resid_df, kind));
    }
    let top = argmin_first(&per);
    Ok(BaselineResult {
        method: BaselineMethod::Multivariate,
        global_p,
        per_covariate_p: per,
        top_covariate: top,
        tau_hat: treatment_contrast(&full, &cols, a_col, &inter, kind, n),
        warnings,
    })
}

fn column_label(c: usize, a_col: usize, names: &[String]) -> String {
    match c {
        0 => "intercept".into(),
        c if c < a_col => names[c - 1].clone(),
        c if c == a_col => "treatment".into(),
        c => format!("treatment:{}", names[c - a_col - 1]),
    }
}

/// Wald test of a coefficient block: F for gaussian, chi-square for binomial.
fn block_wald_p(fit: &GlmFit, positions: &[usize], sigma2: f64, resid_df: f64, kind: OutcomeKind) -> f64 {
    let k = positions.len();
    if k == 0 {
        return 1.0;
    }
    let b = DVector::from_fn(k, |r, _| fit.beta[positions[r]]);
    let v = DMatrix::from_fn(k, k, |r, c| fit.cov_unscaled[(positions[r], positions[c])] * sigma2);
    let Some(chol) = v.cholesky() else { return 1.0 };
    let w = b.dot(&chol.solve(&b));
    match kind {
        OutcomeKind::Continuous => f_sf(w / k as f64, k as f64, resid_df),
        OutcomeKind::Binary => chi2_sf(w, k as f64),
    }
}
