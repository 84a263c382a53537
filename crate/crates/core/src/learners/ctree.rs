//! Conditional inference trees: variable selection by permutation tests of
//! independence (rank scores for numeric covariates, level indicators for
//! categorical ones, asymptotic chi-square p-values), followed by a separate
//! best-split search on the selected covariate only.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{ColumnData, Covariates};
use crate::stats::{chi2_normal_equivalent, chi2_sf, midranks};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SplitRule {
    /// Observations with `x <= threshold` go left.
    Threshold(f64),
    /// `left[level]` marks levels sent left; codes past the end go left.
    Levels(Vec<bool>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Internal {
        covariate: usize,
        rule: SplitRule,
        /// Bonferroni-adjusted selection p-value.
        p_value: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
        n: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalTree {
    /// Node 0 is the root.
    pub nodes: Vec<Node>,
}

/// Resolved growth controls for one tree.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeControls {
    pub mtry: usize,
    pub alpha_split: f64,
    pub min_node: usize,
    pub min_bucket: usize,
}

/// Outcome of the independence test between one covariate and the node response.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssociationTest {
    pub statistic: f64,
    pub df: f64,
    pub p_value: f64,
}

impl AssociationTest {
    /// Ordering key: smaller p first, then larger normal-equivalent statistic.
    fn beats(&self, other: &AssociationTest) -> bool {
        if self.p_value != other.p_value {
            return self.p_value < other.p_value;
        }
        chi2_normal_equivalent(self.statistic, self.df) > chi2_normal_equivalent(other.statistic, other.df)
    }
}

/// Tests independence of covariate `j` and `y` over `rows` using the
/// permutation-conditional mean and covariance of the linear statistic.
/// Returns `None` when the covariate or the response is constant on `rows`.
pub fn association_test(x: &Covariates, j: usize, y: &[f64], rows: &[usize]) -> Option<AssociationTest> {
    let m = rows.len();
    if m < 2 {
        return None;
    }
    let mf = m as f64;
    let ybar = rows.iter().map(|&i| y[i]).sum::<f64>() / mf;
    let v = rows.iter().map(|&i| (y[i] - ybar).powi(2)).sum::<f64>() / mf;
    if v <= 1e-14 * (1.0 + ybar * ybar) {
        return None;
    }
    let (statistic, df) = match &x.column(j).data {
        ColumnData::Numeric(values) => {
            let xs: Vec<f64> = rows.iter().map(|&i| values[i]).collect();
            if xs.iter().all(|&a| a == xs[0]) {
                return None;
            }
            let g = midranks(&xs);
            let sg: f64 = g.iter().sum();
            let sg2: f64 = g.iter().map(|a| a * a).sum();
            let t: f64 = g.iter().zip(rows).map(|(gi, &i)| gi * y[i]).sum();
            let mu = sg * ybar;
            let sigma = v * (mf / (mf - 1.0) * sg2 - sg * sg / (mf - 1.0));
            if sigma <= 0.0 {
                return None;
            }
            ((t - mu).powi(2) / sigma, 1.0)
        }
        ColumnData::Categorical { codes, levels } => {
            let mut count = vec![0usize; levels.len()];
            let mut sum = vec![0.0; levels.len()];
            for &i in rows {
                let c = codes[i] as usize;
                if c < levels.len() {
                    count[c] += 1;
                    sum[c] += y[i];
                }
            }
            let present: Vec<usize> = (0..levels.len()).filter(|&l| count[l] > 0).collect();
            if present.len() < 2 {
                return None;
            }
            // With indicator scores the generalized-inverse quadratic form
            // reduces to ((m-1)/(m V)) Σ_l d_l² / n_l, d_l = S_l - n_l ȳ.
            let q: f64 = present
                .iter()
                .map(|&l| {
                    let d = sum[l] - count[l] as f64 * ybar;
                    d * d / count[l] as f64
                })
                .sum();
            ((mf - 1.0) / (mf * v) * q, (present.len() - 1) as f64)
        }
    };
    Some(AssociationTest {
        statistic,
        df,
        p_value: chi2_sf(statistic, df),
    })
}

fn standardized_split_gain(sum_left: f64, n_left: usize, ybar: f64, m: usize) -> f64 {
    let nl = n_left as f64;
    let d = sum_left - nl * ybar;
    d * d / (nl * (m as f64 - nl))
}

/// Best binary split of `rows` on covariate `j`; `None` if no split keeps
/// `min_bucket` observations on both sides.
fn best_split(x: &Covariates, j: usize, y: &[f64], rows: &[usize], min_bucket: usize) -> Option<SplitRule> {
    let m = rows.len();
    let ybar = rows.iter().map(|&i| y[i]).sum::<f64>() / m as f64;
    let min_bucket = min_bucket.max(1);
    match &x.column(j).data {
        ColumnData::Numeric(values) => {
            let mut order: Vec<usize> = rows.to_vec();
            order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
            let mut best: Option<(f64, f64)> = None;
            let mut left_sum = 0.0;
            for k in 0..m - 1 {
                left_sum += y[order[k]];
                let nl = k + 1;
                if nl < min_bucket || m - nl < min_bucket {
                    continue;
                }
                let (a, b) = (values[order[k]], values[order[k + 1]]);
                if a == b {
                    continue;
                }
                let gain = standardized_split_gain(left_sum, nl, ybar, m);
                if best.is_none_or(|(g, _)| gain > g) {
                    best = Some((gain, a));
                }
            }
            best.map(|(_, t)| SplitRule::Threshold(t))
        }
        ColumnData::Categorical { codes, levels } => {
            let nlev = levels.len();
            let mut count = vec![0usize; nlev];
            let mut sum = vec![0.0; nlev];
            for &i in rows {
                let c = codes[i] as usize;
                if c < nlev {
                    count[c] += 1;
                    sum[c] += y[i];
                }
            }
            let present: Vec<usize> = (0..nlev).filter(|&l| count[l] > 0).collect();
            if present.len() < 2 {
                return None;
            }
            let mut best: Option<(f64, Vec<usize>)> = None;
            let mut consider = |left: Vec<usize>| {
                let nl: usize = left.iter().map(|&l| count[l]).sum();
                if nl < min_bucket || m - nl < min_bucket {
                    return;
                }
                let sl: f64 = left.iter().map(|&l| sum[l]).sum();
                let gain = standardized_split_gain(sl, nl, ybar, m);
                if best.as_ref().is_none_or(|(g, _)| gain > *g) {
                    best = Some((gain, left));
                }
            };
            if present.len() <= 10 {
                // every partition with the first present level on the left
                let rest = present.len() - 1;
                for mask in 0..(1usize << rest) - 1 {
                    let mut left = vec![present[0]];
                    left.extend((0..rest).filter(|b| mask >> b & 1 == 1).map(|b| present[b + 1]));
                    consider(left);
                }
            } else {
                let mut ordered = present.clone();
                ordered.sort_by(|&a, &b| (sum[a] / count[a] as f64).total_cmp(&(sum[b] / count[b] as f64)));
                for k in 1..ordered.len() {
                    consider(ordered[..k].to_vec());
                }
            }
            best.map(|(_, left)| {
                // levels absent from this node follow the left child
                let mut mask: Vec<bool> = (0..nlev).map(|l| count[l] == 0).collect();
                for l in left {
                    mask[l] = true;
                }
                SplitRule::Levels(mask)
            })
        }
    }
}

pub(crate) fn goes_left(x: &Covariates, covariate: usize, rule: &SplitRule, row: usize) -> bool {
    match (rule, &x.column(covariate).data) {
        (SplitRule::Threshold(t), ColumnData::Numeric(v)) => v[row] <= *t,
        (SplitRule::Levels(mask), ColumnData::Categorical { codes, .. }) => {
            mask.get(codes[row] as usize).copied().unwrap_or(true)
        }
        _ => panic!("split rule does not match the kind of covariate {covariate}"),
    }
}

pub(crate) fn is_unseen(x: &Covariates, covariate: usize, rule: &SplitRule, row: usize) -> bool {
    match (rule, &x.column(covariate).data) {
        (SplitRule::Levels(mask), ColumnData::Categorical { codes, .. }) => codes[row] as usize >= mask.len(),
        _ => false,
    }
}

impl ConditionalTree {
    pub fn grow<R: Rng>(x: &Covariates, y: &[f64], rows: Vec<usize>, controls: &TreeControls, rng: &mut R) -> Self {
        let mut tree = ConditionalTree { nodes: Vec::new() };
        tree.build(x, y, rows, controls, rng);
        tree
    }

    fn leaf(&mut self, y: &[f64], rows: &[usize]) -> usize {
        let value = if rows.is_empty() {
            0.0
        } else {
            rows.iter().map(|&i| y[i]).sum::<f64>() / rows.len() as f64
        };
        self.nodes.push(Node::Leaf { value, n: rows.len() });
        self.nodes.len() - 1
    }

    fn build<R: Rng>(&mut self, x: &Covariates, y: &[f64], rows: Vec<usize>, c: &TreeControls, rng: &mut R) -> usize {
        let m = rows.len();
        if m < c.min_node.max(2) || m < 2 * c.min_bucket.max(1) {
            return self.leaf(y, &rows);
        }
        let p = x.p();
        let mtry = c.mtry.clamp(1, p);
        let candidates: Vec<usize> = if mtry >= p {
            (0..p).collect()
        } else {
            let mut v = index::sample(rng, p, mtry).into_vec();
            v.sort_unstable();
            v
        };
        let mut chosen: Option<(usize, AssociationTest)> = None;
        for &j in &candidates {
            if let Some(t) = association_test(x, j, y, &rows) {
                if chosen.as_ref().is_none_or(|(_, best)| t.beats(best)) {
                    chosen = Some((j, t));
                }
            }
        }
        let Some((j, test)) = chosen else {
            return self.leaf(y, &rows);
        };
        let adjusted = (test.p_value * candidates.len() as f64).min(1.0);
        if adjusted > c.alpha_split {
            return self.leaf(y, &rows);
        }
        let Some(rule) = best_split(x, j, y, &rows, c.min_bucket) else {
            return self.leaf(y, &rows);
        };
        let (left_rows, right_rows): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| goes_left(x, j, &rule, i));
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf { value: 0.0, n: m });
        let left = self.build(x, y, left_rows, c, rng);
        let right = self.build(x, y, right_rows, c, rng);
        self.nodes[id] = Node::Internal {
            covariate: j,
            rule,
            p_value: adjusted,
            left,
            right,
        };
        id
    }

    /// Leaf value for `row`, reading covariate `swap.0` from row `swap.1`
    /// instead when a swap is given.
    pub fn predict_row(&self, x: &Covariates, row: usize, swap: Option<(usize, usize)>) -> f64 {
        let mut k = 0;
        loop {
            match &self.nodes[k] {
                Node::Leaf { value, .. } => return *value,
                Node::Internal {
                    covariate, rule, left, right, ..
                } => {
                    let r = match swap {
                        Some((j, other)) if j == *covariate => other,
                        _ => row,
                    };
                    k = if goes_left(x, *covariate, rule, r) { *left } else { *right };
                }
            }
        }
    }

    pub fn is_single_leaf(&self) -> bool {
        self.nodes.len() == 1
    }

    /// Covariates used by at least one split.
    pub fn split_covariates(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self
            .nodes
            .iter()
            .filter_map(|n| match n {
                Node::Internal { covariate, .. } => Some(*covariate),
                Node::Leaf { .. } => None,
            })
            .collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    pub fn root(&self) -> &Node {
        &self.nodes[0]
    }

    pub(crate) fn count_unseen(&self, x: &Covariates, row: usize) -> bool {
        let mut k = 0;
        loop {
            match &self.nodes[k] {
                Node::Leaf { .. } => return false,
                Node::Internal {
                    covariate, rule, left, right, ..
                } => {
                    if is_unseen(x, *covariate, rule, row) {
                        return true;
                    }
                    k = if goes_left(x, *covariate, rule, row) { *left } else { *right };
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::CovariateColumn;
    use crate::rng;

    fn controls() -> TreeControls {
        TreeControls {
            mtry: 10,
            alpha_split: 0.05,
            min_node: 20,
            min_bucket: 7,
        }
    }

    #[test]
    fn categorical_statistic_matches_generalized_inverse_form() {
        // three levels; compare the closed form with an explicit (L-1)-dim Mahalanobis form
        let labels = ["a", "b", "c", "a", "b", "c", "a", "a", "c", "b", "c", "c"];
        let y = [1.0, 2.0, 0.5, 1.5, 3.0, 0.1, 0.9, 1.1, -0.2, 2.2, 0.0, 0.3];
        let x = Covariates::new(vec![CovariateColumn::from_labels("g", &labels)]).unwrap();
        let rows: Vec<usize> = (0..y.len()).collect();
        let t = association_test(&x, 0, &y, &rows).unwrap();
        let m = y.len() as f64;
        let ybar = y.iter().sum::<f64>() / m;
        let v = y.iter().map(|a| (a - ybar).powi(2)).sum::<f64>() / m;
        // levels a, b (drop c)
        let ga: Vec<f64> = labels.iter().map(|&l| (l == "a") as u8 as f64).collect();
        let gb: Vec<f64> = labels.iter().map(|&l| (l == "b") as u8 as f64).collect();
        let na: f64 = ga.iter().sum();
        let nb: f64 = gb.iter().sum();
        let d = [
            ga.iter().zip(&y).map(|(g, y)| g * y).sum::<f64>() - na * ybar,
            gb.iter().zip(&y).map(|(g, y)| g * y).sum::<f64>() - nb * ybar,
        ];
        let s = |ni: f64, nj: f64, same: bool| v * (m / (m - 1.0) * if same { ni } else { 0.0 } - ni * nj / (m - 1.0));
        let (s11, s12, s22) = (s(na, na, true), s(na, nb, false), s(nb, nb, true));
        let det = s11 * s22 - s12 * s12;
        let quad = (d[0] * d[0] * s22 - 2.0 * d[0] * d[1] * s12 + d[1] * d[1] * s11) / det;
        assert!((t.statistic - quad).abs() < 1e-10 * quad.max(1.0), "{} vs {}", t.statistic, quad);
        assert_eq!(t.df, 2.0);
    }

    #[test]
    fn constant_response_gives_single_leaf() {
        let x = Covariates::new(vec![CovariateColumn::numeric("a", (0..100).map(|i| i as f64).collect())]).unwrap();
        let y = vec![1.7; 100];
        let mut r = rng::stream(1, &[]);
        let tree = ConditionalTree::grow(&x, &y, (0..100).collect(), &controls(), &mut r);
        assert!(tree.is_single_leaf());
        assert!((tree.predict_row(&x, 5, None) - 1.7).abs() < 1e-12);
    }

    #[test]
    fn step_function_split_near_true_threshold() {
        use rand_distr::{Distribution, StandardNormal};
        let mut r = rng::stream(11, &[]);
        let n = 500;
        let xs: Vec<f64> = (0..n).map(|_| r.random::<f64>()).collect();
        let y: Vec<f64> = xs
            .iter()
            .map(|&v| {
                let e: f64 = StandardNormal.sample(&mut r);
                3.0 * f64::from(u8::from(v > 0.5)) + 0.5 * e
            })
            .collect();
        let x = Covariates::new(vec![CovariateColumn::numeric("X1", xs)]).unwrap();
        let tree = ConditionalTree::grow(&x, &y, (0..n).collect(), &controls(), &mut r);
        match tree.root() {
            Node::Internal {
                covariate,
                rule: SplitRule::Threshold(t),
                p_value,
                ..
            } => {
                assert_eq!(*covariate, 0);
                assert!(*t > 0.45 && *t < 0.55, "threshold {t}");
                assert!(*p_value <= 0.05);
            }
            other => panic!("expected numeric root split, got {other:?}"),
        }
    }

    #[test]
    fn categorical_split_groups_levels_by_mean() {
        let labels: Vec<&str> = (0..120).map(|i| ["a", "b", "c", "d"][i % 4]).collect();
        let y: Vec<f64> = labels
            .iter()
            .enumerate()
            .map(|(i, &l)| if l == "a" || l == "c" { 5.0 } else { 0.0 } + (i % 7) as f64 * 0.01)
            .collect();
        let x = Covariates::new(vec![CovariateColumn::from_labels("g", &labels)]).unwrap();
        let rows: Vec<usize> = (0..120).collect();
        match best_split(&x, 0, &y, &rows, 7).unwrap() {
            SplitRule::Levels(mask) => assert_eq!(mask, vec![true, false, true, false]),
            r => panic!("{r:?}"),
        }
    }

    #[test]
    fn unseen_level_follows_left_child() {
        let x = Covariates::new(vec![CovariateColumn::categorical("g", vec![0, 1, 5], vec!["a".into(), "b".into(), "c".into(), "d".into(), "e".into(), "f".into()])]).unwrap();
        let rule = SplitRule::Levels(vec![false, true]);
        assert!(!goes_left(&x, 0, &rule, 0));
        assert!(goes_left(&x, 0, &rule, 1));
        assert!(goes_left(&x, 0, &rule, 2));
        assert!(is_unseen(&x, 0, &rule, 2));
    }
}
