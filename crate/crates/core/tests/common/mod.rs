#![allow(dead_code)]

use mvdr::distributions::MvParams;
use mvdr::scale_param::{CholeskyPrecision, LowRankPrecision, ScaleParam};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_vec(rng: &mut ChaCha8Rng, n: usize, sd: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| sd * rng.sample::<f64, _>(StandardNormal))
}

pub fn random_cd(rng: &mut ChaCha8Rng, d: usize) -> CholeskyPrecision {
    let l = DMatrix::from_fn(d, d, |i, j| {
        if i == j {
            rng.random_range(0.5..2.0)
        } else if j < i {
            0.5 * rng.sample::<f64, _>(StandardNormal)
        } else {
            0.0
        }
    });
    CholeskyPrecision::new(l).unwrap()
}

pub fn random_lra(rng: &mut ChaCha8Rng, d: usize, r: usize) -> LowRankPrecision {
    let a = DVector::from_fn(d, |_, _| rng.random_range(0.5..2.0));
    let v = DMatrix::from_fn(d, r, |_, _| 0.5 * rng.sample::<f64, _>(StandardNormal));
    LowRankPrecision::new(a, v).unwrap()
}

pub fn random_params(rng: &mut ChaCha8Rng, d: usize, lra: bool, nu: Option<f64>) -> MvParams {
    let mu = normal_vec(rng, d, 1.0);
    let scale = if lra {
        ScaleParam::Lra(random_lra(rng, d, 2))
    } else {
        ScaleParam::Cd(random_cd(rng, d))
    };
    MvParams::new(mu, scale, nu).unwrap()
}

pub fn random_spd(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
    let b = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    &b * b.transpose() + DMatrix::identity(d, d) * (d as f64)
}

/// `|a − b| ≤ tol · max(|a|, |b|, floor)`.
pub fn close(a: f64, b: f64, tol: f64, floor: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(floor)
}
