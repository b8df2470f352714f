mod common;

use common::*;
use mvdr::distributions::{loglik, Coordinate, Family, MvParams, RowEval};
use mvdr::scale_param::{CholeskyPrecision, LowRankPrecision, ScaleParam};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

fn perturb(p: &MvParams, c: Coordinate, h: f64) -> MvParams {
    let mut q = p.clone();
    match c {
        Coordinate::Location(i) => q.mu[i] += h,
        Coordinate::Chol(i, j) => {
            if let ScaleParam::Cd(cd) = &p.scale {
                let mut l = cd.factor().clone();
                l[(i, j)] += h;
                q.scale = ScaleParam::Cd(CholeskyPrecision::new(l).unwrap());
            }
        }
        Coordinate::LraDiag(d) => {
            if let ScaleParam::Lra(lr) = &p.scale {
                let mut a = lr.diag().clone();
                a[d] += h;
                q.scale = ScaleParam::Lra(LowRankPrecision::new(a, lr.v().clone()).unwrap());
            }
        }
        Coordinate::LraV(i, j) => {
            if let ScaleParam::Lra(lr) = &p.scale {
                let mut v = lr.v().clone();
                v[(i, j)] += h;
                q.scale = ScaleParam::Lra(LowRankPrecision::new(lr.diag().clone(), v).unwrap());
            }
        }
        Coordinate::Dof => q.nu = Some(p.nu.unwrap() + h),
    }
    q
}

fn value(p: &MvParams, c: Coordinate) -> f64 {
    match (c, &p.scale) {
        (Coordinate::Location(i), _) => p.mu[i],
        (Coordinate::Chol(i, j), ScaleParam::Cd(cd)) => cd.get(i, j),
        (Coordinate::LraDiag(d), ScaleParam::Lra(l)) => l.diag()[d],
        (Coordinate::LraV(i, j), ScaleParam::Lra(l)) => l.v()[(i, j)],
        (Coordinate::Dof, _) => p.nu.unwrap(),
        _ => unreachable!(),
    }
}

fn coordinates(p: &MvParams) -> Vec<Coordinate> {
    let d = p.dim();
    let mut out: Vec<Coordinate> = (0..d).map(Coordinate::Location).collect();
    match &p.scale {
        ScaleParam::Cd(_) => {
            for i in 0..d {
                for j in 0..=i {
                    out.push(Coordinate::Chol(i, j));
                }
            }
        }
        ScaleParam::Lra(l) => {
            out.extend((0..d).map(Coordinate::LraDiag));
            for i in 0..d {
                for j in 0..l.rank() {
                    out.push(Coordinate::LraV(i, j));
                }
            }
        }
    }
    if p.nu.is_some() {
        out.push(Coordinate::Dof);
    }
    out
}

fn check_family(fam: Family, lra: bool, seed: u64) {
    let mut rng = rng(seed);
    for &d in &[2usize, 3, 5] {
        for _ in 0..100 {
            let nu = match fam {
                Family::Normal => None,
                Family::StudentT => Some(rng.random_range(3.0..20.0)),
            };
            let p = random_params(&mut rng, d, lra, nu);
            let y = &p.mu + normal_vec(&mut rng, d, 1.0);
            let ev = RowEval::new(fam, &p, &y).unwrap();
            for c in coordinates(&p) {
                let (d1, d2) = ev.coord(c).unwrap();
                let h = 1e-5 * value(&p, c).abs().max(1.0);
                let lp = loglik(fam, &perturb(&p, c, h), &y).unwrap();
                let lm = loglik(fam, &perturb(&p, c, -h), &y).unwrap();
                let fd1 = (lp - lm) / (2.0 * h);
                let tol = if c == Coordinate::Dof { 1e-4 } else { 1e-5 };
                assert!(close(d1, fd1, tol, 1.0), "{fam:?} lra={lra} D={d} {c}: {d1} vs {fd1}");

                // second derivative against differences of the analytic first derivative
                let pp = perturb(&p, c, h);
                let pm = perturb(&p, c, -h);
                let g_p = RowEval::new(fam, &pp, &y).unwrap().coord(c).unwrap().0;
                let g_m = RowEval::new(fam, &pm, &y).unwrap().coord(c).unwrap().0;
                let fd2 = (g_p - g_m) / (2.0 * h);
                assert!(close(d2, fd2, tol, 1.0), "{fam:?} lra={lra} D={d} {c} (2nd): {d2} vs {fd2}");
            }
        }
    }
}

#[test]
fn normal_cholesky_derivatives_match_finite_differences() {
    check_family(Family::Normal, false, 1);
}

#[test]
fn normal_low_rank_derivatives_match_finite_differences() {
    check_family(Family::Normal, true, 2);
}

#[test]
fn student_cholesky_derivatives_match_finite_differences() {
    check_family(Family::StudentT, false, 3);
}

#[test]
fn student_low_rank_derivatives_match_finite_differences() {
    check_family(Family::StudentT, true, 4);
}

#[test]
fn cholesky_shortcut_matches_dense_loglik() {
    let mut rng = rng(5);
    for _ in 0..50 {
        let d = 4;
        let p = random_params(&mut rng, d, false, None);
        let y = &p.mu + normal_vec(&mut rng, d, 1.0);
        let omega = p.scale.precision();
        let r = &y - &p.mu;
        let det = omega.clone().determinant();
        let dense = -0.5 * d as f64 * (2.0 * std::f64::consts::PI).ln() + 0.5 * det.ln()
            - 0.5 * (r.transpose() * &omega * &r)[(0, 0)];
        assert!((loglik(Family::Normal, &p, &y).unwrap() - dense).abs() < 1e-10);
    }
}

#[test]
fn student_tends_to_normal() {
    let mut rng = rng(6);
    for _ in 0..50 {
        for lra in [false, true] {
            let mut p = random_params(&mut rng, 3, lra, None);
            let y = &p.mu + normal_vec(&mut rng, 3, 1.0);
            let ln = loglik(Family::Normal, &p, &y).unwrap();
            let gn = RowEval::new(Family::Normal, &p, &y).unwrap();
            let gradn: Vec<_> = coordinates(&p).into_iter().map(|c| gn.coord(c).unwrap()).collect();
            p.nu = Some(1e8);
            let lt = loglik(Family::StudentT, &p, &y).unwrap();
            assert!((ln - lt).abs() < 1e-4, "{ln} vs {lt}");
            let gt = RowEval::new(Family::StudentT, &p, &y).unwrap();
            let cs: Vec<_> = coordinates(&p).into_iter().filter(|c| *c != Coordinate::Dof).collect();
            for (c, n) in cs.iter().zip(gradn) {
                let t = gt.coord(*c).unwrap();
                assert!((t.0 - n.0).abs() < 1e-4 * n.0.abs().max(1.0), "{c}");
                assert!((t.1 - n.1).abs() < 1e-4 * n.1.abs().max(1.0), "{c}");
            }
        }
    }
}

#[test]
fn loglik_invariant_under_permutation() {
    let mut rng = rng(7);
    for _ in 0..50 {
        let d = 5;
        let p = random_params(&mut rng, d, true, Some(6.0));
        let y = &p.mu + normal_vec(&mut rng, d, 1.0);
        let mut perm: Vec<usize> = (0..d).collect();
        for i in (1..d).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let ScaleParam::Lra(l) = &p.scale else { unreachable!() };
        let a = DVector::from_fn(d, |i, _| l.diag()[perm[i]]);
        let v = DMatrix::from_fn(d, 2, |i, j| l.v()[(perm[i], j)]);
        let q = MvParams::new(
            DVector::from_fn(d, |i, _| p.mu[perm[i]]),
            ScaleParam::Lra(LowRankPrecision::new(a, v).unwrap()),
            p.nu,
        )
        .unwrap();
        let yp = DVector::from_fn(d, |i, _| y[perm[i]]);
        let l0 = loglik(Family::StudentT, &p, &y).unwrap();
        let l1 = loglik(Family::StudentT, &q, &yp).unwrap();
        assert!((l0 - l1).abs() < 1e-10);
    }
}

#[test]
fn dof_score_decays_with_large_nu() {
    let mut rng = rng(8);
    let p0 = random_params(&mut rng, 3, false, Some(10.0));
    let y = &p0.mu + normal_vec(&mut rng, 3, 0.3);
    let mut prev = f64::INFINITY;
    for nu in [1e2, 1e4, 1e6] {
        let mut p = p0.clone();
        p.nu = Some(nu);
        let g = mvdr::distributions::dnu(&p, &y).unwrap().abs();
        assert!(g < prev);
        prev = g;
    }
    assert!(prev < 1e-8);
}
