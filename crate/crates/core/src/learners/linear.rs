//! L1-penalized linear and logistic regression fitted by cyclic coordinate
//! descent on standardized columns, with the penalty chosen by K-fold
//! cross-validation and the one-standard-error rule.

use serde::{Deserialize, Serialize};

use crate::data::{ColumnData, Covariates};
use crate::error::{Error, Result};

use super::{clip_probability, Family};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LambdaSpec {
    /// `"auto"`: data-driven path, chosen by cross-validation.
    Named(AutoLambda),
    Fixed(f64),
    Grid(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AutoLambda {
    Auto,
}

impl Default for LambdaSpec {
    fn default() -> Self {
        LambdaSpec::Named(AutoLambda::Auto)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinearParams {
    pub lambda: LambdaSpec,
    pub cv_folds: usize,
    pub n_lambda: usize,
    pub tolerance: f64,
    pub max_sweeps: usize,
}

impl Default for LinearParams {
    fn default() -> Self {
        LinearParams {
            lambda: LambdaSpec::default(),
            cv_folds: 10,
            n_lambda: 100,
            tolerance: 1e-7,
            max_sweeps: 100_000,
        }
    }
}

/// One design column of the fitted model: a numeric covariate or the
/// indicator of one non-reference level of a categorical covariate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DesignTerm {
    Numeric(usize),
    Level(usize, u32),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenalizedLinearModel {
    pub family: Family,
    pub terms: Vec<DesignTerm>,
    /// Coefficients on the original column scale.
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub lambda: f64,
    pub center: Vec<f64>,
    pub scale: Vec<f64>,
}

/// Column-major matrix with per-column standardization.
struct Standardized {
    xs: Vec<f64>,
    n: usize,
    q: usize,
    center: Vec<f64>,
    scale: Vec<f64>,
}

impl Standardized {
    fn new(x: &[f64], n: usize, q: usize) -> Self {
        let mut xs = x.to_vec();
        let mut center = vec![0.0; q];
        let mut scale = vec![0.0; q];
        for j in 0..q {
            let col = &mut xs[j * n..(j + 1) * n];
            let m = col.iter().sum::<f64>() / n as f64;
            let v = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n as f64;
            let s = v.sqrt();
            center[j] = m;
            if s > 1e-10 * (1.0 + m.abs()) {
                scale[j] = s;
                col.iter_mut().for_each(|v| *v = (*v - m) / s);
            } else {
                col.iter_mut().for_each(|v| *v = 0.0);
            }
        }
        Standardized { xs, n, q, center, scale }
    }

    fn col(&self, j: usize) -> &[f64] {
        &self.xs[j * self.n..(j + 1) * self.n]
    }

    fn usable(&self, j: usize) -> bool {
        self.scale[j] > 0.0
    }
}

// Path stopping rules on the training loss relative to the null loss.
const PATH_SATURATION: f64 = 1e-3;
const PATH_MIN_GAIN: f64 = 1e-5;
/// |logit| beyond which a fitted probability is within about 1e-5 of 0 or 1.
const SEPARATION_ETA: f64 = 11.5;

fn soft_threshold(z: f64, g: f64) -> f64 {
    if z > g {
        z - g
    } else if z < -g {
        z + g
    } else {
        0.0
    }
}

struct Solver<'a> {
    std: &'a Standardized,
    tolerance: f64,
    max_sweeps: usize,
}

impl Solver<'_> {
    /// Weighted lasso on working response: minimizes
    /// `(1/2n) Σ w_i (z_i - b0 - x_i β)² + λ‖β‖₁`; `r` holds `z - b0 - Xβ`.
    /// With `w = None` the weights are 1 and the intercept stays fixed
    /// (columns are centered).
    fn descend(&self, lambda: f64, w: Option<&[f64]>, b0: &mut f64, beta: &mut [f64], r: &mut [f64]) -> Result<()> {
        let n = self.std.n as f64;
        let q = self.std.q;
        let curv: Vec<f64> = (0..q)
            .map(|j| match w {
                None => 1.0,
                Some(w) => self.std.col(j).iter().zip(w).map(|(x, w)| w * x * x).sum::<f64>() / n,
            })
            .collect();
        let wsum = w.map(|w| w.iter().sum::<f64>());
        let mut sweeps = 0;
        let mut full = true;
        loop {
            sweeps += 1;
            let mut max_change = 0.0_f64;
            if let (Some(w), Some(ws)) = (w, wsum) {
                let shift = r.iter().zip(w).map(|(r, w)| r * w).sum::<f64>() / ws;
                if shift != 0.0 {
                    *b0 += shift;
                    r.iter_mut().for_each(|v| *v -= shift);
                    max_change = max_change.max(shift.abs());
                }
            }
            for j in 0..q {
                if !self.std.usable(j) || curv[j] <= 0.0 || (!full && beta[j] == 0.0) {
                    continue;
                }
                let col = self.std.col(j);
                let grad = match w {
                    None => col.iter().zip(r.iter()).map(|(x, r)| x * r).sum::<f64>() / n,
                    Some(w) => col.iter().zip(r.iter()).zip(w).map(|((x, r), w)| w * x * r).sum::<f64>() / n,
                };
                let old = beta[j];
                let new = soft_threshold(grad + curv[j] * old, lambda) / curv[j];
                if new != old {
                    let d = new - old;
                    for (ri, xi) in r.iter_mut().zip(col) {
                        *ri -= d * xi;
                    }
                    beta[j] = new;
                    max_change = max_change.max(d.abs());
                }
            }
            if max_change < self.tolerance {
                // a quiet full sweep means every coordinate, active or not, has settled
                if full {
                    return Ok(());
                }
                full = true;
            } else {
                full = false;
            }
            if sweeps >= self.max_sweeps {
                return Err(Error::Convergence {
                    sweeps,
                    gap: max_change,
                    tolerance: self.tolerance,
                });
            }
        }
    }

    /// Fits the path; returns `(intercept, β)` on the standardized scale per λ.
    /// With `early_stop` the path ends once the deviance is nearly saturated or
    /// stops improving, so the result may be shorter than `lambdas`.
    fn path(&self, y: &[f64], family: Family, lambdas: &[f64], early_stop: bool) -> Result<Vec<(f64, Vec<f64>)>> {
        let n = self.std.n;
        let q = self.std.q;
        let ybar = y.iter().sum::<f64>() / n as f64;
        let mut beta = vec![0.0; q];
        let mut out = Vec::with_capacity(lambdas.len());
        let null_dev = loss(family, y, &vec![
            match family {
                Family::Gaussian => ybar,
                Family::Binomial => logit(ybar.clamp(1e-5, 1.0 - 1e-5)),
            };
            n
        ]);
        let mut prev_dev = null_dev;
        let mut saturated = |dev: f64| {
            let stop = early_stop
                && null_dev > 0.0
                && (dev < PATH_SATURATION * null_dev || prev_dev - dev < PATH_MIN_GAIN * null_dev);
            prev_dev = dev;
            stop
        };
        match family {
            Family::Gaussian => {
                let mut b0 = ybar;
                let mut r: Vec<f64> = y.iter().map(|v| v - ybar).collect();
                for (k, &lambda) in lambdas.iter().enumerate() {
                    self.descend(lambda, None, &mut b0, &mut beta, &mut r)?;
                    out.push((b0, beta.clone()));
                    let dev = r.iter().map(|v| v * v).sum::<f64>() / n as f64;
                    if saturated(dev) && k > 0 {
                        break;
                    }
                }
            }
            Family::Binomial => {
                let mut b0 = logit(ybar.clamp(1e-5, 1.0 - 1e-5));
                for (k, &lambda) in lambdas.iter().enumerate() {
                    let mut last_dev = f64::INFINITY;
                    for _ in 0..100 {
                        let eta = self.linear_predictor(b0, &beta);
                        let mut w = Vec::with_capacity(n);
                        let mut r = Vec::with_capacity(n);
                        for (e, &yi) in eta.iter().zip(y) {
                            let p = sigmoid(*e).clamp(1e-5, 1.0 - 1e-5);
                            let wi = (p * (1.0 - p)).max(1e-5);
                            w.push(wi);
                            r.push((yi - p) / wi);
                        }
                        self.descend(lambda, Some(&w), &mut b0, &mut beta, &mut r)?;
                        let dev = binomial_deviance(y, &self.linear_predictor(b0, &beta));
                        if (last_dev - dev).abs() < 1e-8 * (dev.abs() + 0.1) {
                            break;
                        }
                        last_dev = dev;
                    }
                    out.push((b0, beta.clone()));
                    let eta = self.linear_predictor(b0, &beta);
                    // fitted probabilities at the clamp signal (quasi-)separation
                    let separated = early_stop && eta.iter().any(|e| e.abs() > SEPARATION_ETA);
                    if (saturated(binomial_deviance(y, &eta)) || separated) && k > 0 {
                        break;
                    }
                }
            }
        }
        Ok(out)
    }

    fn linear_predictor(&self, b0: f64, beta: &[f64]) -> Vec<f64> {
        let mut eta = vec![b0; self.std.n];
        for (j, &b) in beta.iter().enumerate() {
            if b != 0.0 {
                for (e, x) in eta.iter_mut().zip(self.std.col(j)) {
                    *e += b * x;
                }
            }
        }
        eta
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Mean binomial deviance given linear predictors.
fn binomial_deviance(y: &[f64], eta: &[f64]) -> f64 {
    y.iter()
        .zip(eta)
        .map(|(&yi, &e)| {
            let p = sigmoid(e).clamp(1e-5, 1.0 - 1e-5);
            -2.0 * (yi * p.ln() + (1.0 - yi) * (1.0 - p).ln())
        })
        .sum::<f64>()
        / y.len() as f64
}

fn lambda_max(std: &Standardized, y: &[f64]) -> f64 {
    let n = std.n as f64;
    let ybar = y.iter().sum::<f64>() / n;
    (0..std.q)
        .filter(|&j| std.usable(j))
        .map(|j| std.col(j).iter().zip(y).map(|(x, y)| x * (y - ybar)).sum::<f64>().abs() / n)
        .fold(0.0, f64::max)
}

fn geometric_path(max: f64, ratio: f64, count: usize) -> Vec<f64> {
    if count <= 1 {
        return vec![max];
    }
    let step = ratio.ln() / (count - 1) as f64;
    (0..count).map(|k| max * (step * k as f64).exp()).collect()
}

/// Design terms for covariates: numeric columns and non-reference level indicators.
pub fn design_terms(x: &Covariates) -> Vec<DesignTerm> {
    let mut terms = Vec::new();
    for (j, c) in x.columns().iter().enumerate() {
        match &c.data {
            ColumnData::Numeric(_) => terms.push(DesignTerm::Numeric(j)),
            ColumnData::Categorical { levels, .. } => {
                terms.extend((1..levels.len()).map(|l| DesignTerm::Level(j, l as u32)));
            }
        }
    }
    terms
}

/// Column-major raw design for the given terms. Level codes outside the
/// fitted dictionary produce all-zero indicators (the reference level).
pub fn design_values(x: &Covariates, terms: &[DesignTerm]) -> Vec<f64> {
    let n = x.n();
    let mut out = Vec::with_capacity(n * terms.len());
    for t in terms {
        match *t {
            DesignTerm::Numeric(j) => match &x.column(j).data {
                ColumnData::Numeric(v) => out.extend_from_slice(v),
                _ => panic!("term expects numeric column {j}"),
            },
            DesignTerm::Level(j, l) => match &x.column(j).data {
                ColumnData::Categorical { codes, .. } => out.extend(codes.iter().map(|&c| if c == l { 1.0 } else { 0.0 })),
                _ => panic!("term expects categorical column {j}"),
            },
        }
    }
    out
}

fn is_degenerate(y: &[f64]) -> bool {
    let first = y[0];
    y.iter().all(|&v| v == first)
}

fn loss(family: Family, y: &[f64], eta: &[f64]) -> f64 {
    match family {
        Family::Gaussian => y.iter().zip(eta).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / y.len() as f64,
        Family::Binomial => binomial_deviance(y, eta),
    }
}

/// Fits an L1-penalized model on the covariates' raw encoding.
pub fn fit_penalized_linear(
    x: &Covariates,
    y: &[f64],
    family: Family,
    params: &LinearParams,
    seed: u64,
) -> Result<PenalizedLinearModel> {
    let terms = design_terms(x);
    let values = design_values(x, &terms);
    fit_penalized_linear_matrix(&values, x.n(), terms, y, family, params, seed)
}

/// Fits on an explicit column-major design.
pub fn fit_penalized_linear_matrix(
    values: &[f64],
    n: usize,
    terms: Vec<DesignTerm>,
    y: &[f64],
    family: Family,
    params: &LinearParams,
    seed: u64,
) -> Result<PenalizedLinearModel> {
    let q = terms.len();
    if n < 10 {
        return Err(Error::param(format!("penalized regression needs n >= 10, got {n}")));
    }
    if y.len() != n || values.len() != n * q {
        return Err(Error::param("design and response sizes disagree"));
    }
    if family == Family::Binomial && y.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::param("binomial response must be 0/1"));
    }
    let std = Standardized::new(values, n, q);
    let ybar = y.iter().sum::<f64>() / n as f64;
    let intercept_only = |lambda: f64| {
        let b0 = match family {
            Family::Gaussian => ybar,
            Family::Binomial => logit(clip_probability(ybar)),
        };
        PenalizedLinearModel {
            family,
            terms: terms.clone(),
            coefficients: vec![0.0; q],
            intercept: b0,
            lambda,
            center: std.center.clone(),
            scale: std.scale.clone(),
        }
    };
    if is_degenerate(y) {
        return Ok(intercept_only(0.0));
    }
    let lmax = lambda_max(&std, y);
    if lmax <= 0.0 {
        return Ok(intercept_only(0.0));
    }
    let solver = Solver {
        std: &std,
        tolerance: params.tolerance,
        max_sweeps: params.max_sweeps,
    };

    let (path, chosen) = match &params.lambda {
        LambdaSpec::Fixed(l) => {
            if *l < 0.0 {
                return Err(Error::param("lambda must be non-negative"));
            }
            if *l >= lmax {
                return Ok(intercept_only(*l));
            }
            let mut lambdas = geometric_path(lmax, (l / lmax).max(1e-6), 20);
            lambdas.push(*l);
            let last = lambdas.len() - 1;
            (lambdas, last)
        }
        LambdaSpec::Named(AutoLambda::Auto) => {
            let ratio = if n > q { 1e-4 } else { 1e-2 };
            let lambdas = geometric_path(lmax, ratio, params.n_lambda.max(2));
            let idx = cross_validate(values, n, q, y, family, &lambdas, params, seed)?;
            (lambdas, idx)
        }
        LambdaSpec::Grid(grid) => {
            if grid.is_empty() || grid.iter().any(|l| *l < 0.0) {
                return Err(Error::param("lambda grid must be non-empty and non-negative"));
            }
            let mut lambdas = grid.clone();
            lambdas.sort_by(|a, b| b.total_cmp(a));
            let idx = cross_validate(values, n, q, y, family, &lambdas, params, seed)?;
            (lambdas, idx)
        }
    };
    let fits = solver.path(y, family, &path[..=chosen], false)?;
    let (b0, beta) = fits.last().cloned().expect("non-empty path");
    Ok(PenalizedLinearModel::from_standardized(family, terms, path[chosen], &std, b0, &beta))
}

/// Returns the index of the one-standard-error λ along `lambdas` (decreasing).
#[allow(clippy::too_many_arguments)]
fn cross_validate(
    values: &[f64],
    n: usize,
    q: usize,
    y: &[f64],
    family: Family,
    lambdas: &[f64],
    params: &LinearParams,
    seed: u64,
) -> Result<usize> {
    let k = params.cv_folds.clamp(2, n);
    let fold_of = match family {
        Family::Gaussian => crate::data::random_folds(n, k, seed),
        Family::Binomial => crate::data::stratified_folds(y, k, seed),
    };
    let mut fold_loss = vec![vec![0.0; lambdas.len()]; k];
    let mut fold_n = vec![0usize; k];
    for f in 0..k {
        let train: Vec<usize> = (0..n).filter(|&i| fold_of[i] != f).collect();
        let test: Vec<usize> = (0..n).filter(|&i| fold_of[i] == f).collect();
        fold_n[f] = test.len();
        if test.is_empty() {
            continue;
        }
        let sub = |rows: &[usize]| -> Vec<f64> {
            let mut v = Vec::with_capacity(rows.len() * q);
            for j in 0..q {
                v.extend(rows.iter().map(|&i| values[j * n + i]));
            }
            v
        };
        let ytr: Vec<f64> = train.iter().map(|&i| y[i]).collect();
        let yte: Vec<f64> = test.iter().map(|&i| y[i]).collect();
        let xte = sub(&test);
        let std = Standardized::new(&sub(&train), train.len(), q);
        let fits: Vec<(f64, Vec<f64>)> = if is_degenerate(&ytr) {
            let b0 = match family {
                Family::Gaussian => ytr[0],
                Family::Binomial => logit(clip_probability(ytr[0])),
            };
            vec![(b0, vec![0.0; q])]
        } else {
            let solver = Solver {
                std: &std,
                tolerance: params.tolerance,
                max_sweeps: params.max_sweeps,
            };
            solver.path(&ytr, family, lambdas, true)?
        };
        for (li, loss_slot) in fold_loss[f].iter_mut().enumerate() {
            let (b0, beta) = &fits[li.min(fits.len() - 1)];
            let mut eta = vec![*b0; test.len()];
            for j in 0..q {
                if beta[j] == 0.0 || std.scale[j] == 0.0 {
                    continue;
                }
                let c = beta[j] / std.scale[j];
                for (t, e) in eta.iter_mut().enumerate() {
                    *e += c * (xte[j * test.len() + t] - std.center[j]);
                }
            }
            *loss_slot = loss(family, &yte, &eta);
        }
    }
    // weighted mean and standard error across folds
    let total: f64 = fold_n.iter().sum::<usize>() as f64;
    let used = fold_n.iter().filter(|&&m| m > 0).count() as f64;
    let mut cvm = vec![0.0; lambdas.len()];
    let mut cvsd = vec![0.0; lambdas.len()];
    for li in 0..lambdas.len() {
        let m: f64 = (0..k).map(|f| fold_loss[f][li] * fold_n[f] as f64).sum::<f64>() / total;
        let v: f64 = (0..k).map(|f| (fold_loss[f][li] - m).powi(2) * fold_n[f] as f64).sum::<f64>() / total;
        cvm[li] = m;
        cvsd[li] = (v / (used - 1.0).max(1.0)).sqrt();
    }
    let best = (0..lambdas.len()).fold(0, |b, i| if cvm[i] < cvm[b] { i } else { b });
    let threshold = cvm[best] + cvsd[best];
    // largest λ (earliest index) whose CV risk is within one SE of the minimum
    Ok((0..=best).find(|&i| cvm[i] <= threshold).unwrap_or(best))
}

impl PenalizedLinearModel {
    fn from_standardized(
        family: Family,
        terms: Vec<DesignTerm>,
        lambda: f64,
        std: &Standardized,
        b0: f64,
        beta: &[f64],
    ) -> Self {
        let mut coefficients = vec![0.0; beta.len()];
        let mut intercept = b0;
        for j in 0..beta.len() {
            if beta[j] != 0.0 && std.scale[j] > 0.0 {
                coefficients[j] = beta[j] / std.scale[j];
                intercept -= coefficients[j] * std.center[j];
            }
        }
        PenalizedLinearModel {
            family,
            terms,
            coefficients,
            intercept,
            lambda,
            center: std.center.clone(),
            scale: std.scale.clone(),
        }
    }

    pub fn predict(&self, x: &Covariates) -> Vec<f64> {
        let n = x.n();
        let values = design_values(x, &self.terms);
        let mut eta = vec![self.intercept; n];
        for (j, &c) in self.coefficients.iter().enumerate() {
            if c != 0.0 {
                for (e, v) in eta.iter_mut().zip(&values[j * n..(j + 1) * n]) {
                    *e += c * v;
                }
            }
        }
        match self.family {
            Family::Gaussian => eta,
            Family::Binomial => eta.into_iter().map(|e| clip_probability(sigmoid(e))).collect(),
        }
    }

    /// Number of non-zero slope coefficients.
    pub fn support_size(&self) -> usize {
        self.coefficients.iter().filter(|&&c| c != 0.0).count()
    }

    /// Largest violation of the lasso optimality conditions (gaussian family,
    /// standardized scale) on the training data.
    pub fn kkt_violation(&self, x: &Covariates, y: &[f64]) -> f64 {
        let n = x.n();
        let values = design_values(x, &self.terms);
        let fitted = self.predict(x);
        let r: Vec<f64> = y.iter().zip(&fitted).map(|(a, b)| a - b).collect();
        let mut worst = 0.0_f64;
        for j in 0..self.terms.len() {
            if self.scale[j] == 0.0 {
                continue;
            }
            let col = &values[j * n..(j + 1) * n];
            let g = col
                .iter()
                .zip(&r)
                .map(|(v, r)| (v - self.center[j]) / self.scale[j] * r)
                .sum::<f64>()
                / n as f64;
            let b = self.coefficients[j] * self.scale[j];
            let viol = if b == 0.0 {
                (g.abs() - self.lambda).max(0.0)
            } else {
                (g - self.lambda * b.signum()).abs()
            };
            worst = worst.max(viol);
        }
        worst
    }
}
