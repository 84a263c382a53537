//! Global permutation test of independence between covariates and
//! pseudo-outcomes, based on linear statistics T = Σ g(xᵢ) ψᵢ standardized
//! by their permutation-conditional moments.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{encode, Covariates, DesignMatrix, Encoding};
use crate::error::{Error, Result};
use crate::rng::{self, TAG_ASYMPTOTIC, TAG_PERM};
use crate::stats::chi2_sf;

pub const DEFAULT_PERMUTATIONS: usize = 9999;
pub const ASYMPTOTIC_DRAWS: usize = 100_000;
/// Relative slack when comparing a resampled statistic with the observed one,
/// so that ties computed in a different summation order still count.
const TIE_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum StatisticKind {
    #[default]
    MaxType,
    Quadratic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TestMethod {
    #[default]
    PermutationMc,
    Asymptotic,
    /// All n! orderings; only for n ≤ 10.
    Exhaustive,
}

/// User-facing settings of the global test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TestSettings {
    pub statistic: StatisticKind,
    pub method: TestMethod,
    pub permutations: usize,
}

impl Default for TestSettings {
    fn default() -> Self {
        TestSettings {
            statistic: StatisticKind::MaxType,
            method: TestMethod::PermutationMc,
            permutations: DEFAULT_PERMUTATIONS,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearStatistic {
    pub t: Vec<f64>,
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    /// Standardized components of the retained columns.
    pub z: Vec<f64>,
    pub retained: Vec<usize>,
    pub dropped: Vec<usize>,
}

impl LinearStatistic {
    pub fn statistic(&self, kind: StatisticKind) -> f64 {
        combine(&self.z, kind)
    }
}

fn combine(z: &[f64], kind: StatisticKind) -> f64 {
    match kind {
        StatisticKind::MaxType => z.iter().fold(0.0_f64, |m, v| m.max(v.abs())),
        StatisticKind::Quadratic => z.iter().map(|v| v * v).sum(),
    }
}

/// Tⱼ with mean (Σᵢ Gᵢⱼ)ψ̄ and variance V_ψ[(n/(n−1))ΣGᵢⱼ² − (ΣGᵢⱼ)²/(n−1)].
pub fn linear_statistic(g: &DesignMatrix, psi: &[f64]) -> LinearStatistic {
    let n = psi.len();
    let nf = n as f64;
    let q = g.q();
    let psi_bar = psi.iter().sum::<f64>() / nf;
    let v_psi = psi.iter().map(|p| (p - psi_bar).powi(2)).sum::<f64>() / nf;
    let mut out = LinearStatistic {
        t: Vec::with_capacity(q),
        mu: Vec::with_capacity(q),
        sigma: Vec::with_capacity(q),
        z: Vec::new(),
        retained: Vec::new(),
        dropped: Vec::new(),
    };
    let scale = psi.iter().fold(0.0_f64, |m, p| m.max(p.abs())).max(1e-300);
    for j in 0..q {
        let col = g.columns.column(j);
        let sg: f64 = col.iter().sum();
        let sg2: f64 = col.iter().map(|v| v * v).sum();
        let t: f64 = col.iter().zip(psi).map(|(a, b)| a * b).sum();
        let mu = sg * psi_bar;
        let sigma = if n > 1 { v_psi * (nf / (nf - 1.0) * sg2 - sg * sg / (nf - 1.0)) } else { 0.0 };
        out.t.push(t);
        out.mu.push(mu);
        out.sigma.push(sigma);
        // relative threshold: exact zeros come out as rounding noise
        if sigma > 1e-24 * scale * scale * sg2.max(1.0) * nf {
            out.z.push((t - mu) / sigma.sqrt());
            out.retained.push(j);
        } else {
            out.dropped.push(j);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HetTestResult {
    pub statistic_kind: StatisticKind,
    pub observed: f64,
    pub p_value: f64,
    pub method: TestMethod,
    /// Number of resamples (permutations or normal draws).
    pub resamples: usize,
    pub retained_columns: usize,
    pub dropped_columns: Vec<String>,
    pub degenerate: bool,
    pub seed: u64,
}

/// Centered retained columns scaled by 1/√σⱼ, so that the permuted z is a
/// plain dot product with the permuted ψ.
struct Scorer {
    cols: Vec<Vec<f64>>,
}

impl Scorer {
    fn new(g: &DesignMatrix, stat: &LinearStatistic) -> Self {
        let n = g.n() as f64;
        let cols = stat
            .retained
            .iter()
            .map(|&j| {
                let col = g.columns.column(j);
                let m = col.iter().sum::<f64>() / n;
                let s = stat.sigma[j].sqrt();
                col.iter().map(|v| (v - m) / s).collect()
            })
            .collect();
        Scorer { cols }
    }

    fn statistic(&self, psi: &[f64], kind: StatisticKind) -> f64 {
        let mut acc = 0.0_f64;
        for c in &self.cols {
            let z: f64 = c.iter().zip(psi).map(|(a, b)| a * b).sum();
            acc = match kind {
                StatisticKind::MaxType => acc.max(z.abs()),
                StatisticKind::Quadratic => acc + z * z,
            };
        }
        acc
    }
}

fn at_least(value: f64, observed: f64) -> bool {
    value >= observed - TIE_TOLERANCE * observed.abs()
}

pub fn global_test(
    x: &Covariates,
    psi: &[f64],
    kind: StatisticKind,
    method: TestMethod,
    permutations: usize,
    seed: u64,
) -> Result<HetTestResult> {
    if psi.len() != x.n() {
        return Err(Error::param("pseudo-outcome length differs from covariate rows"));
    }
    if psi.iter().any(|v| !v.is_finite()) {
        return Err(Error::param("pseudo-outcomes must be finite"));
    }
    let g = encode(x, Encoding::DummyPlusRank);
    global_test_design(&g, psi, kind, method, permutations, seed)
}

/// As [`global_test`] on an already encoded design.
pub fn global_test_design(
    g: &DesignMatrix,
    psi: &[f64],
    kind: StatisticKind,
    method: TestMethod,
    permutations: usize,
    seed: u64,
) -> Result<HetTestResult> {
    if method == TestMethod::PermutationMc && permutations < 99 {
        return Err(Error::param(format!("need at least 99 permutations, got {permutations}")));
    }
    let n = psi.len();
    if method == TestMethod::Exhaustive && n > 10 {
        return Err(Error::param(format!("exhaustive enumeration needs n <= 10, got {n}")));
    }
    let stat = linear_statistic(g, psi);
    let dropped_columns = stat.dropped.iter().map(|&j| g.column_names[j].clone()).collect();
    let mut result = HetTestResult {
        statistic_kind: kind,
        observed: stat.statistic(kind),
        p_value: 1.0,
        method,
        resamples: 0,
        retained_columns: stat.retained.len(),
        dropped_columns,
        degenerate: stat.retained.is_empty(),
        seed,
    };
    if result.degenerate {
        return Ok(result);
    }
    let observed = result.observed;
    let scorer = Scorer::new(g, &stat);
    let (hits, total, add_one) = match method {
        TestMethod::PermutationMc => {
            let hits = (0..permutations)
                .into_par_iter()
                .map(|b| {
                    let mut r = rng::stream(seed, &[TAG_PERM, b as u64]);
                    let mut shuffled = psi.to_vec();
                    shuffled.shuffle(&mut r);
                    usize::from(at_least(scorer.statistic(&shuffled, kind), observed))
                })
                .sum::<usize>();
            (hits, permutations, true)
        }
        TestMethod::Exhaustive => {
            let mut hits = 0usize;
            let mut total = 0usize;
            for_each_permutation(psi, |perm| {
                total += 1;
                hits += usize::from(at_least(scorer.statistic(perm, kind), observed));
            });
            (hits, total, false)
        }
        TestMethod::Asymptotic => match kind {
            StatisticKind::Quadratic => {
                result.p_value = chi2_sf(observed, stat.retained.len() as f64);
                return Ok(result);
            }
            StatisticKind::MaxType => (max_normal_exceedances(&scorer, observed, seed), ASYMPTOTIC_DRAWS, true),
        },
    };
    result.resamples = total;
    result.p_value = if add_one {
        (1 + hits) as f64 / (total + 1) as f64
    } else {
        hits as f64 / total as f64
    };
    Ok(result)
}

/// Counts draws of max|Z|, Z ~ N(0, R), reaching `observed`, where R is the
/// permutation-null correlation of the standardized components.
fn max_normal_exceedances(scorer: &Scorer, observed: f64, seed: u64) -> usize {
    let q = scorer.cols.len();
    let corr = DMatrix::from_fn(q, q, |a, b| {
        let dot: f64 = scorer.cols[a].iter().zip(&scorer.cols[b]).map(|(u, v)| u * v).sum();
        let na: f64 = scorer.cols[a].iter().map(|u| u * u).sum();
        let nb: f64 = scorer.cols[b].iter().map(|u| u * u).sum();
        dot / (na * nb).sqrt()
    });
    let eig = SymmetricEigen::new(corr);
    let factor = DMatrix::from_fn(q, q, |r, c| eig.eigenvectors[(r, c)] * eig.eigenvalues[c].max(0.0).sqrt());
    const CHUNK: usize = 1000;
    (0..ASYMPTOTIC_DRAWS / CHUNK)
        .into_par_iter()
        .map(|chunk| {
            let mut r = rng::stream(seed, &[TAG_ASYMPTOTIC, chunk as u64]);
            let mut u = vec![0.0; q];
            let mut hits = 0;
            for _ in 0..CHUNK {
                u.iter_mut().for_each(|v| *v = StandardNormal.sample(&mut r));
                let mut m = 0.0_f64;
                for row in 0..q {
                    let z: f64 = (0..q).map(|c| factor[(row, c)] * u[c]).sum();
                    m = m.max(z.abs());
                }
                hits += usize::from(at_least(m, observed));
            }
            hits
        })
        .sum()
}

/// Heap's algorithm over all orderings of `values`.
fn for_each_permutation(values: &[f64], mut visit: impl FnMut(&[f64])) {
    let mut a = values.to_vec();
    let n = a.len();
    let mut c = vec![0usize; n];
    visit(&a);
    let mut i = 1;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                a.swap(0, i);
            } else {
                a.swap(c[i], i);
            }
            visit(&a);
            c[i] += 1;
            i = 1;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
}
