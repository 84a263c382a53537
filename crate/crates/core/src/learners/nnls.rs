//! Lawson–Hanson active-set nonnegative least squares.

use nalgebra::{DMatrix, DVector};

/// Minimizes ‖A w − b‖² subject to w ≥ 0. `a` is row-major `rows × cols`.
pub fn nnls(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let m = a.ncols();
    let mut w = DVector::zeros(m);
    let mut passive = vec![false; m];
    let atb = a.transpose() * b;
    let ata = a.transpose() * a;
    let scale = atb.amax().max(1.0);
    let tol = 1e-12 * scale * m as f64;
    for _ in 0..(3 * m + 30) {
        let grad = &atb - &ata * &w;
        let candidate = (0..m)
            .filter(|&j| !passive[j] && grad[j] > tol)
            .max_by(|&i, &j| grad[i].total_cmp(&grad[j]));
        let Some(j) = candidate else { break };
        passive[j] = true;
        loop {
            let idx: Vec<usize> = (0..m).filter(|&k| passive[k]).collect();
            let z = solve_subset(&ata, &atb, &idx);
            if idx.iter().zip(z.iter()).all(|(_, &v)| v > 0.0) {
                w.fill(0.0);
                for (&k, &v) in idx.iter().zip(z.iter()) {
                    w[k] = v;
                }
                break;
            }
            // step toward z until the first passive coefficient hits zero
            let mut alpha = f64::INFINITY;
            for (&k, &v) in idx.iter().zip(z.iter()) {
                if v <= 0.0 {
                    alpha = alpha.min(w[k] / (w[k] - v));
                }
            }
            for (&k, &v) in idx.iter().zip(z.iter()) {
                w[k] += alpha * (v - w[k]);
                if w[k] <= 1e-15 {
                    w[k] = 0.0;
                    passive[k] = false;
                }
            }
            if !passive.iter().any(|&p| p) {
                break;
            }
        }
    }
    w
}

fn solve_subset(ata: &DMatrix<f64>, atb: &DVector<f64>, idx: &[usize]) -> DVector<f64> {
    let k = idx.len();
    let sub = DMatrix::from_fn(k, k, |r, c| ata[(idx[r], idx[c])]);
    let rhs = DVector::from_fn(k, |r, _| atb[idx[r]]);
    // pseudo-inverse handles collinear members
    sub.clone()
        .svd(true, true)
        .solve(&rhs, 1e-12 * sub.amax().max(1e-300))
        .unwrap_or_else(|_| DVector::zeros(k))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unconstrained_solution_when_positive() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let b = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let w = nnls(&a, &b);
        assert!((w[0] - 1.0).abs() < 1e-10 && (w[1] - 2.0).abs() < 1e-10);
    }

    #[test]
    fn negative_direction_clamped() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let b = DVector::from_vec(vec![-1.0, 2.0, 0.0]);
        let w = nnls(&a, &b);
        assert_eq!(w[0], 0.0);
        assert!((w[1] - 2.0).abs() < 1e-10);
    }

    #[test]
    fn kkt_conditions_hold_on_random_problem() {
        use rand::Rng;
        let mut r = crate::rng::stream(5, &[]);
        let a = DMatrix::from_fn(40, 5, |_, _| r.random::<f64>() - 0.3);
        let b = DVector::from_fn(40, |_, _| r.random::<f64>() - 0.5);
        let w = nnls(&a, &b);
        let g = a.transpose() * (&b - &a * &w);
        for j in 0..5 {
            assert!(w[j] >= 0.0);
            if w[j] > 0.0 {
                assert!(g[j].abs() < 1e-8);
            } else {
                assert!(g[j] <= 1e-8);
            }
        }
    }
}
