use mvdr_study::synth::{synth_generate, Dependence, SynthSpec, SYNTH_NU};
use nalgebra::{DMatrix, DVector};

fn spec(dim: usize, days: usize, dependence: Dependence, seed: u64) -> SynthSpec {
    SynthSpec { dim, days, dependence, seed }
}

#[test]
fn static_factor_is_constant_and_diagonal_has_no_band() {
    let s = synth_generate(&spec(4, 80, Dependence::Static, 1)).unwrap();
    assert!(s.truth.factor.iter().all(|l| l == &s.truth.factor[0]));
    assert!(s.truth.factor[0][(1, 0)] != 0.0);

    let d = synth_generate(&spec(4, 80, Dependence::Diagonal, 1)).unwrap();
    for l in &d.truth.factor {
        assert_eq!(l.clone().lower_triangle(), DMatrix::from_diagonal(&l.diagonal()));
    }
}

#[test]
fn time_varying_band_moves() {
    let s = synth_generate(&spec(4, 80, Dependence::TimeVaryingCd, 2)).unwrap();
    let band: Vec<f64> = s.truth.factor.iter().map(|l| l[(1, 0)] / l[(1, 1)]).collect();
    let lo = band.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = band.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    assert!(hi - lo > 0.5, "{lo}..{hi}");
    // the diagonal stays fixed
    assert!(s.truth.factor.iter().all(|l| l.diagonal() == s.truth.factor[0].diagonal()));
}

#[test]
fn location_follows_the_stated_coefficients() {
    let s = synth_generate(&spec(3, 70, Dependence::Static, 3)).unwrap();
    let [c0, cl, cr, cg] = s.truth.mu_coef;
    for t in [0, 33, 69] {
        for h in 0..3 {
            let want = c0 + cl * s.frame.load[(t, h)] + cr * s.frame.res[(t, h)] + cg * s.frame.gas[t];
            assert!((s.truth.mu[t][h] - want).abs() < 1e-9);
        }
    }
}

#[test]
fn sample_covariance_matches_truth() {
    let days = 10_000;
    let s = synth_generate(&spec(3, days, Dependence::Static, 4)).unwrap();
    assert_eq!(s.truth.nu, SYNTH_NU);
    let resid: Vec<DVector<f64>> = (0..days).map(|t| s.frame.price_row(t) - &s.truth.mu[t]).collect();
    let mean = resid.iter().fold(DVector::zeros(3), |a, r| a + r) / days as f64;
    let cov = resid.iter().fold(DMatrix::zeros(3, 3), |a, r| a + (r - &mean) * (r - &mean).transpose()) / (days - 1) as f64;
    let want = s.truth.covariance(0).unwrap();
    for i in 0..3 {
        for j in 0..3 {
            let scale = (want[(i, i)] * want[(j, j)]).sqrt();
            assert!((cov[(i, j)] - want[(i, j)]).abs() < 0.05 * scale, "({i},{j}): {} vs {}", cov[(i, j)], want[(i, j)]);
        }
    }
}

#[test]
fn generation_is_deterministic() {
    let a = synth_generate(&spec(4, 90, Dependence::TimeVaryingCd, 7)).unwrap();
    let b = synth_generate(&spec(4, 90, Dependence::TimeVaryingCd, 7)).unwrap();
    assert_eq!(a, b);
    let mut ca = Vec::new();
    let mut cb = Vec::new();
    a.frame.write_hourly_csv(&mut ca).unwrap();
    b.frame.write_hourly_csv(&mut cb).unwrap();
    assert_eq!(ca, cb);
    let c = synth_generate(&spec(4, 90, Dependence::TimeVaryingCd, 8)).unwrap();
    assert_ne!(a.frame.prices, c.frame.prices);
}

#[test]
fn generated_frame_is_valid_and_starts_on_monday() {
    let s = synth_generate(&spec(5, 61, Dependence::Diagonal, 9)).unwrap();
    s.frame.validate().unwrap();
    assert_eq!((s.frame.n_days(), s.frame.dim()), (61, 5));
    assert_eq!(s.frame.weekday(0), 0);
}

#[test]
fn rejects_tiny_problems() {
    assert!(synth_generate(&spec(1, 100, Dependence::Static, 1)).is_err());
    assert!(synth_generate(&spec(3, 59, Dependence::Static, 1)).is_err());
}

#[test]
fn dependence_names_parse() {
    assert_eq!("time-varying-cd".parse::<Dependence>().unwrap(), Dependence::TimeVaryingCd);
    assert_eq!("Static".parse::<Dependence>().unwrap(), Dependence::Static);
    assert!("banded".parse::<Dependence>().is_err());
}
