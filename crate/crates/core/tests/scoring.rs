mod common;

use common::{normal_vec, random_params, rng};
use mvdr::distributions::{loglik, Family};
use mvdr::scoring::*;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

fn random_ensemble(r: &mut ChaCha8Rng, m: usize, d: usize) -> DMatrix<f64> {
    let shift = normal_vec(r, d, 2.0);
    DMatrix::from_fn(m, d, |_, k| shift[k] + r.random::<f64>() * 3.0 - 1.5)
}

fn crps_brute(y: f64, x: &[f64]) -> f64 {
    let m = x.len() as f64;
    let a = x.iter().map(|v| (v - y).abs()).sum::<f64>() / m;
    let mut p = 0.0;
    for i in 0..x.len() {
        for j in 0..x.len() {
            p += (x[i] - x[j]).abs();
        }
    }
    a - 0.5 * p / (m * (m - 1.0))
}

fn es_brute(y: &DVector<f64>, x: &DMatrix<f64>) -> f64 {
    let m = x.nrows() as f64;
    let mut a = 0.0;
    let mut p = 0.0;
    for i in 0..x.nrows() {
        a += (x.row(i).transpose() - y).norm();
        for j in 0..x.nrows() {
            p += (x.row(i) - x.row(j)).norm();
        }
    }
    a / m - p / (2.0 * m * m)
}

fn vs_brute(y: &DVector<f64>, x: &DMatrix<f64>, p: f64) -> f64 {
    let d = y.len();
    let mut s = 0.0;
    for i in 0..d {
        for j in 0..d {
            let mut e = 0.0;
            for k in 0..x.nrows() {
                e += (x[(k, i)] - x[(k, j)]).abs().powf(p);
            }
            e /= x.nrows() as f64;
            s += ((y[i] - y[j]).abs().powf(p) - e).powi(2);
        }
    }
    s
}

#[test]
fn point_errors() {
    let y = vec![DVector::from_vec(vec![1.0, 2.0]), DVector::from_vec(vec![-1.0, 0.5])];
    let exact: Vec<DMatrix<f64>> = y.iter().map(|v| DMatrix::from_fn(5, 2, |_, k| v[k])).collect();
    assert_eq!(rmse(&y, &exact).unwrap(), 0.0);
    assert_eq!(mae(&y, &exact).unwrap(), 0.0);
    let biased: Vec<DMatrix<f64>> = y.iter().map(|v| DMatrix::from_fn(5, 2, |_, k| v[k] + 0.7)).collect();
    assert!((rmse(&y, &biased).unwrap() - 0.7).abs() < 1e-12);
    assert!((mae(&y, &biased).unwrap() - 0.7).abs() < 1e-12);
}

#[test]
fn point_errors_match_direct_formula() {
    let mut r = rng(1);
    let t = 7;
    let d = 3;
    let y: Vec<DVector<f64>> = (0..t).map(|_| normal_vec(&mut r, d, 1.0)).collect();
    let e: Vec<DMatrix<f64>> = (0..t).map(|_| random_ensemble(&mut r, 11, d)).collect();
    let mut se = 0.0;
    let mut ae = 0.0;
    for (yt, xt) in y.iter().zip(&e) {
        for k in 0..d {
            let col: Vec<f64> = xt.column(k).iter().copied().collect();
            let mean = col.iter().sum::<f64>() / col.len() as f64;
            let mut s = col.clone();
            s.sort_by(f64::total_cmp);
            se += (yt[k] - mean).powi(2);
            ae += (yt[k] - s[5]).abs();
        }
    }
    let n = (t * d) as f64;
    assert!((rmse(&y, &e).unwrap() - (se / n).sqrt()).abs() < 1e-12);
    assert!((mae(&y, &e).unwrap() - ae / n).abs() < 1e-12);
}

#[test]
fn crps_cases() {
    assert!(crps_pwm(0.5, &[0.0, 1.0]).unwrap().abs() < 1e-15);
    assert!((crps_pwm(2.0, &[5.0; 10]).unwrap() - 3.0).abs() < 1e-12);
    assert!(crps_pwm(0.0, &[1.0]).is_err());
    let mut r = rng(2);
    for m in [2, 3, 200, 500] {
        for _ in 0..20 {
            let x: Vec<f64> = (0..m).map(|_| r.random::<f64>() * 10.0 - 5.0).collect();
            let y = r.random::<f64>() * 6.0 - 3.0;
            assert!((crps_pwm(y, &x).unwrap() - crps_brute(y, &x)).abs() < 1e-10);
        }
    }
}

#[test]
fn energy_score_cases() {
    let y = DVector::from_vec(vec![1.0, -1.0, 2.0]);
    let one = DMatrix::from_row_slice(1, 3, &[0.0, 0.0, 0.0]);
    assert!((energy_score(&y, &one).unwrap() - y.norm()).abs() < 1e-15);
    let at = DMatrix::from_fn(4, 3, |_, k| y[k]);
    assert_eq!(energy_score(&y, &at).unwrap(), 0.0);
    let mut r = rng(3);
    for _ in 0..10 {
        let x = random_ensemble(&mut r, 60, 5);
        let y = normal_vec(&mut r, 5, 1.0);
        assert!((energy_score(&y, &x).unwrap() - es_brute(&y, &x)).abs() < 1e-10);
    }
}

#[test]
fn energy_score_is_close_to_crps_in_one_dimension() {
    let mut r = rng(4);
    for _ in 0..20 {
        let m = 50;
        let x = random_ensemble(&mut r, m, 1);
        let y = DVector::from_element(1, r.random::<f64>());
        let col: Vec<f64> = x.column(0).iter().copied().collect();
        let mut mpd = 0.0;
        for i in 0..m {
            for j in 0..m {
                mpd += (col[i] - col[j]).abs();
            }
        }
        mpd /= (m * m) as f64;
        let gap = (energy_score(&y, &x).unwrap() - crps_pwm(y[0], &col).unwrap()).abs();
        assert!(gap <= mpd / (m as f64 - 1.0) + 1e-12);
    }
}

#[test]
fn dss_cases() {
    // ensemble with mean 0 and covariance exactly I
    let x = DMatrix::from_row_slice(4, 2, &[1.0, 1.0, 1.0, -1.0, -1.0, 1.0, -1.0, -1.0]) * (3f64 / 4.0).sqrt();
    assert!(dss(&DVector::zeros(2), &x).unwrap().abs() < 1e-12);
    let x2 = DMatrix::from_row_slice(4, 2, &[2.0, 1.0, 2.0, -1.0, -2.0, 1.0, -2.0, -1.0]) * (3f64 / 4.0).sqrt();
    let v = dss(&DVector::from_vec(vec![2.0, 0.0]), &x2).unwrap();
    assert!((v - (4f64.ln() + 1.0)).abs() < 1e-12, "{v}");

    let mut r = rng(5);
    for _ in 0..20 {
        let x = random_ensemble(&mut r, 40, 4);
        let y = normal_vec(&mut r, 4, 1.0);
        let mu = x.row_mean().transpose();
        let c = DMatrix::from_fn(40, 4, |i, k| x[(i, k)] - mu[k]);
        let cov = c.transpose() * &c / 39.0;
        let oracle = cov.determinant().ln() + ((&y - &mu).transpose() * cov.clone().lu().solve(&(&y - &mu)).unwrap())[0];
        assert!((dss(&y, &x).unwrap() - oracle).abs() < 1e-8);
        // recentring on the observation lowers the score
        let moved = DMatrix::from_fn(40, 4, |i, k| x[(i, k)] - mu[k] + y[k]);
        assert!(dss(&y, &moved).unwrap() <= dss(&y, &x).unwrap());
    }
}

#[test]
fn dss_loads_singular_covariance() {
    let x = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 3.0, 2.0, 3.0, 4.0, 0.0, 1.0, 2.0]);
    assert!(dss(&DVector::from_vec(vec![1.0, 2.0, 3.0]), &x).unwrap().is_finite());
}

#[test]
fn variogram_cases() {
    let y = DVector::from_vec(vec![0.0, 1.0]);
    // member differences 0 and 1 → mean pairwise difference 0.5
    let x = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0]);
    assert!((variogram_raw(&y, &x, 1.0).unwrap() - 0.5).abs() < 1e-15);
    assert!((variogram_score(&y, &x, 1.0).unwrap() - (0.5f64 / 4.0).sqrt()).abs() < 1e-15);
    let matching = DMatrix::from_row_slice(3, 2, &[0.0, 1.0, 5.0, 6.0, -2.0, -1.0]);
    assert_eq!(variogram_raw(&y, &matching, 0.5).unwrap(), 0.0);
    let mut r = rng(6);
    for p in [0.5, 1.0] {
        for _ in 0..10 {
            let x = random_ensemble(&mut r, 30, 6);
            let y = normal_vec(&mut r, 6, 1.0);
            assert!((variogram_raw(&y, &x, p).unwrap() - vs_brute(&y, &x, p)).abs() < 1e-10);
        }
    }
}

#[test]
fn multivariate_scores_are_permutation_invariant() {
    let mut r = rng(7);
    let x = random_ensemble(&mut r, 50, 4);
    let y = normal_vec(&mut r, 4, 1.0);
    let perm = [3, 1, 0, 2];
    let xp = DMatrix::from_fn(50, 4, |i, k| x[(i, perm[k])]);
    let yp = DVector::from_fn(4, |k, _| y[perm[k]]);
    assert!((energy_score(&y, &x).unwrap() - energy_score(&yp, &xp).unwrap()).abs() < 1e-10);
    assert!((dss(&y, &x).unwrap() - dss(&yp, &xp).unwrap()).abs() < 1e-10);
    assert!((variogram_score(&y, &x, 0.5).unwrap() - variogram_score(&yp, &xp, 0.5).unwrap()).abs() < 1e-10);
}

#[test]
fn log_score_is_negative_loglik() {
    let mut r = rng(8);
    let p = random_params(&mut r, 3, false, Some(5.0));
    let y = normal_vec(&mut r, 3, 1.0);
    assert_eq!(log_score(Family::StudentT, &p, &y).unwrap(), -loglik(Family::StudentT, &p, &y).unwrap());
    let id = mvdr::distributions::MvParams::new(
        DVector::zeros(3),
        mvdr::scale_param::ScaleParam::Cd(mvdr::scale_param::CholeskyPrecision::identity(3)),
        None,
    )
    .unwrap();
    let v = log_score(Family::Normal, &id, &DVector::zeros(3)).unwrap();
    assert!((v - 1.5 * (2.0 * std::f64::consts::PI).ln()).abs() < 1e-12);
}

#[test]
fn dm_degenerate_and_short_cases() {
    let a: Vec<f64> = (0..40).map(|i| i as f64).collect();
    let r = dm_test(&a, &a, DmVariance::Sample).unwrap();
    assert_eq!((r.statistic, r.p_a_better, r.p_b_better), (0.0, 0.5, 0.5));
    let b: Vec<f64> = a.iter().map(|v| v + 1.0).collect();
    assert!(dm_test(&a, &b, DmVariance::Sample).unwrap().degenerate);
    assert!(dm_test(&a[..10], &b[..10], DmVariance::Sample).is_err());
}

#[test]
fn dm_detects_a_better_model() {
    let mut hits = 0;
    for s in 0..200 {
        let mut r = rng(1000 + s);
        let delta = normal_vec(&mut r, 736, 1.0);
        let sa: Vec<f64> = delta.iter().map(|d| d - 0.5).collect();
        let sb = vec![0.0; 736];
        if dm_test(&sa, &sb, DmVariance::Sample).unwrap().p_a_better < 0.01 {
            hits += 1;
        }
    }
    assert!(hits >= 198, "{hits}/200");
}

#[test]
fn newey_west_matches_sample_variance_without_autocorrelation() {
    let mut r = rng(9);
    let sa: Vec<f64> = normal_vec(&mut r, 2000, 1.0).iter().map(|v| v + 0.05).collect();
    let sb = vec![0.0; 2000];
    let a = dm_test(&sa, &sb, DmVariance::Sample).unwrap();
    let b = dm_test(&sa, &sb, DmVariance::NeweyWest).unwrap();
    assert!((a.statistic - b.statistic).abs() < 0.2 * a.statistic.abs().max(1.0));
}

#[test]
fn dm_matrix_orientation() {
    let mut r = rng(10);
    let good: Vec<f64> = normal_vec(&mut r, 100, 0.1).iter().map(|v| v + 1.0).collect();
    let bad: Vec<f64> = normal_vec(&mut r, 100, 0.1).iter().map(|v| v + 2.0).collect();
    let m = dm_matrix(&[&bad, &good], DmVariance::Sample).unwrap();
    // column model "good" beats row model "bad"
    assert!(m[(0, 1)] < 1e-6);
    assert!(m[(1, 0)] > 1.0 - 1e-6);
    assert!(m[(0, 0)].is_nan());
}

#[test]
fn rule_names_round_trip() {
    for r in ScoreRule::ALL {
        assert_eq!(r.name().parse::<ScoreRule>().unwrap(), r);
    }
}
