mod common;

use common::*;
use mvdr::online_lasso::*;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;

/// Plain coordinate descent on raw rows, independent of the Gramian code.
fn batch_cd(x: &DMatrix<f64>, z: &DVector<f64>, lam: f64, unpen: &[usize], start: &DVector<f64>) -> DVector<f64> {
    let (n, j) = x.shape();
    let mut beta = start.clone();
    let mut resid = z - x * &beta;
    for _ in 0..100_000 {
        let mut delta = 0.0f64;
        for k in 0..j {
            let col = x.column(k);
            let ss: f64 = col.iter().map(|v| v * v).sum();
            let rho: f64 = (0..n).map(|i| col[i] * (resid[i] + col[i] * beta[k])).sum();
            let l = if unpen.contains(&k) { 0.0 } else { lam };
            let new = soft_threshold(rho, l) / ss;
            let d = new - beta[k];
            if d != 0.0 {
                for i in 0..n {
                    resid[i] -= col[i] * d;
                }
            }
            beta[k] = new;
            delta = delta.max(d.abs());
        }
        if delta < 1e-13 {
            break;
        }
    }
    beta
}

fn problem(seed: u64, n: usize, j: usize) -> (DMatrix<f64>, DVector<f64>) {
    let mut r = rng(seed);
    let x = DMatrix::from_fn(n, j, |_, c| if c == 0 { 1.0 } else { r.sample::<f64, _>(StandardNormal) });
    let beta = DVector::from_fn(j, |k, _| if k % 5 == 0 { 1.0 + k as f64 * 0.1 } else { 0.0 });
    let z = &x * beta + normal_vec(&mut r, n, 1.0);
    (x, z)
}

fn stream(x: &DMatrix<f64>, z: &DVector<f64>, gamma: f64, w: Option<&DVector<f64>>) -> GramianState {
    let mut s = GramianState::new(x.ncols(), gamma).unwrap();
    for i in 0..x.nrows() {
        let row: Vec<f64> = x.row(i).iter().copied().collect();
        s.update(&row, z[i], w.map_or(1.0, |w| w[i])).unwrap();
    }
    s
}

#[test]
fn streaming_gramian_equals_batch_products() {
    let (x, z) = problem(1, 50, 6);
    let s = stream(&x, &z, 0.0, None);
    let g = x.transpose() * &x;
    let h = x.transpose() * &z;
    assert!((s.g() - g).abs().max() < 1e-12);
    assert!((s.h() - h).abs().max() < 1e-12);
}

#[test]
fn streaming_path_equals_batch_descent() {
    for seed in 0..20 {
        let (x, z) = problem(100 + seed, 500, 30);
        let s = stream(&x, &z, 0.0, None);
        let unpen = [0usize];
        let grid = lambda_grid(&s, 10, 1e-3, &unpen).unwrap();
        let path = path_solve(&s, &grid.values, &unpen, 100_000, 1e-13).unwrap();
        let mut start = DVector::zeros(30);
        for (i, &lam) in grid.values.iter().enumerate() {
            let b = batch_cd(&x, &z, lam, &unpen, &start);
            let diff = (path.beta(i) - &b).abs().max();
            assert!(diff < 1e-8, "seed {seed} λ#{i}: {diff}");
            start = b;
        }
    }
}

#[test]
fn zero_penalty_matches_dense_solve_and_rls() {
    let (x, z) = problem(2, 200, 8);
    let s = stream(&x, &z, 0.0, None);
    let cd = cd_solve(&s, &DVector::zeros(8), 0.0, &[0], 100_000, 1e-13).unwrap();
    assert!(cd.converged);
    let dense = s.g().clone().lu().solve(s.h()).unwrap();
    let rls = rls_solve(&s).unwrap();
    assert!((&cd.beta - &dense).abs().max() < 1e-8);
    assert!((&rls - &dense).abs().max() < 1e-8);
}

#[test]
fn discounted_rls_equals_weighted_least_squares() {
    let (x, z) = problem(3, 120, 5);
    let gamma = 0.03;
    let mut r = rng(33);
    let w = DVector::from_fn(120, |_, _| r.random_range(0.2..2.0));
    let s = stream(&x, &z, gamma, Some(&w));
    let n = x.nrows();
    let mut g = DMatrix::zeros(5, 5);
    let mut h = DVector::zeros(5);
    for i in 0..n {
        let c = w[i] * (1.0 - gamma).powi((n - 1 - i) as i32);
        let xi = x.row(i).transpose();
        g += &xi * xi.transpose() * c;
        h += xi * (c * z[i]);
    }
    let want = g.lu().solve(&h).unwrap();
    assert!((rls_solve(&s).unwrap() - want).abs().max() < 1e-8);
}

#[test]
fn kkt_conditions_hold() {
    let (x, z) = problem(4, 300, 12);
    let s = stream(&x, &z, 0.0, None);
    let lam = 0.1 * lambda_max(&s, &[0]);
    let tol = 1e-9;
    let res = cd_solve(&s, &DVector::zeros(12), lam, &[0], 100_000, tol).unwrap();
    let grad = s.h() - s.g() * &res.beta;
    let slack = 1e-6 * lam;
    for k in 1..12 {
        if res.beta[k] == 0.0 {
            assert!(grad[k].abs() <= lam + slack);
        } else {
            assert!((grad[k] - lam * res.beta[k].signum()).abs() <= slack, "{k}");
        }
    }
    assert!(grad[0].abs() <= slack);
}

#[test]
fn top_of_grid_is_empty_and_support_grows() {
    let mut grows = 0;
    let trials = 100;
    for seed in 0..trials {
        let (x, z) = problem(500 + seed, 100, 10);
        let s = stream(&x, &z, 0.0, None);
        let grid = lambda_grid(&s, DEFAULT_GRID_LEN, DEFAULT_EPS, &[0]).unwrap();
        let path = path_solve(&s, &grid.values, &[0], DEFAULT_MAX_ITER, 1e-10).unwrap();
        assert!(path.coefs.row(0).iter().skip(1).all(|v| *v == 0.0));
        assert!(path.coefs.iter().all(|v| v.is_finite()));
        let weakly_growing = (1..path.len()).all(|i| {
            (1..10).all(|k| path.coefs[(i - 1, k)] == 0.0 || path.coefs[(i, k)] != 0.0)
        });
        if weakly_growing {
            grows += 1;
        }
    }
    assert!(grows as f64 >= 0.95 * trials as f64, "{grows}/{trials}");
}

#[test]
fn single_lambda_path_equals_cd_solve() {
    let (x, z) = problem(6, 80, 7);
    let s = stream(&x, &z, 0.0, None);
    let lam = 0.3 * lambda_max(&s, &[0]);
    let p = path_solve(&s, &[lam], &[0], 1000, 1e-10).unwrap();
    let c = cd_solve(&s, &DVector::zeros(7), lam, &[0], 1000, 1e-10).unwrap();
    assert_eq!(p.beta(0), c.beta);
}

#[test]
fn iteration_cap_is_reported() {
    let (x, z) = problem(7, 80, 7);
    let s = stream(&x, &z, 0.0, None);
    let c = cd_solve(&s, &DVector::zeros(7), 0.0, &[], 1, 1e-15).unwrap();
    assert!(!c.converged);
}

proptest! {
    #[test]
    fn soft_threshold_is_odd_and_nonexpansive(x in -1e3f64..1e3, y in -1e3f64..1e3, lam in 0f64..50.0) {
        prop_assert_eq!(soft_threshold(-x, lam), -soft_threshold(x, lam));
        prop_assert!((soft_threshold(x, lam) - soft_threshold(y, lam)).abs() <= (x - y).abs() + 1e-12);
    }
}
