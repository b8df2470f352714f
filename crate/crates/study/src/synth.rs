//! Synthetic day-ahead markets with known multivariate-t price distributions.

use chrono::NaiveDate;
use mvdr::distributions::{self, Family, MvParams};
use mvdr::scale_param::{CholeskyPrecision, ScaleParam};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Result, StudyError};
use crate::frame::MarketFrame;

/// Degrees of freedom of the generated prices.
pub const SYNTH_NU: f64 = 8.0;
/// First generated date, a Monday.
pub const SYNTH_START: (i32, u32, u32) = (2018, 1, 1);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Dependence {
    /// Constant precision matrix.
    Static,
    /// First sub-diagonal of the precision factor moves with renewable infeed.
    TimeVaryingCd,
    /// Diagonal precision (independent hours).
    Diagonal,
}

impl std::str::FromStr for Dependence {
    type Err = StudyError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "static" => Ok(Dependence::Static),
            "time-varying-cd" | "time-varying" => Ok(Dependence::TimeVaryingCd),
            "diagonal" => Ok(Dependence::Diagonal),
            _ => Err(StudyError::Config(format!("unknown dependence '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub dim: usize,
    pub days: usize,
    pub dependence: Dependence,
    pub seed: u64,
}

/// Per-day ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthTruth {
    pub nu: f64,
    pub mu: Vec<DVector<f64>>,
    /// Lower-triangular precision factors `L` with `Ω = Lᵀ L`.
    pub factor: Vec<DMatrix<f64>>,
    /// Location coefficients on (1, Load_h, RES_h, Gas).
    pub mu_coef: [f64; 4],
    /// Sub-diagonal of `diag(σ)·L` as `c0 + c1·z_t`.
    pub band_coef: [f64; 2],
}

impl SynthTruth {
    pub fn params(&self, day: usize) -> Result<MvParams> {
        let scale = ScaleParam::Cd(CholeskyPrecision::new(self.factor[day].clone())?);
        Ok(MvParams::new(self.mu[day].clone(), scale, Some(self.nu))?)
    }

    pub fn covariance(&self, day: usize) -> Result<DMatrix<f64>> {
        let p = self.params(day)?;
        let sigma = mvdr::scale_param::covariance_from_precision(&p.scale.precision())?;
        Ok(sigma * (self.nu / (self.nu - 2.0)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthData {
    pub frame: MarketFrame,
    pub truth: SynthTruth,
}

struct Ar1 {
    mean: f64,
    phi: f64,
    sd: f64,
    x: f64,
}

impl Ar1 {
    fn new(mean: f64, phi: f64, marginal_sd: f64) -> Self {
        Self { mean, phi, sd: marginal_sd * (1.0 - phi * phi).sqrt(), x: mean }
    }

    fn step<R: Rng>(&mut self, rng: &mut R) -> f64 {
        let e: f64 = rng.sample(StandardNormal);
        self.x = self.mean + self.phi * (self.x - self.mean) + self.sd * e;
        self.x
    }
}

/// Draws fundamentals, locations and precision factors, then prices.
///
/// Location: `μ_{t,h} = 5 + 0.5 Load_{t,h} − 0.6 RES_{t,h} + 0.8 Gas_t`.
/// Scale: `L_t = diag(1/σ) (I + B_t)` with `B_t` nonzero only on the first
/// sub-diagonal, equal to `−0.6 + 0.45 z_t` where `z_t` is the standardized
/// renewable driver (time-varying mode), `−0.6` (static) or `0` (diagonal).
pub fn synth_generate(spec: &SynthSpec) -> Result<SynthData> {
    let (d, t) = (spec.dim, spec.days);
    if d < 2 || t < 60 {
        return Err(StudyError::Config(format!("synthetic data needs D ≥ 2 and T ≥ 60, got D={d}, T={t}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let start = NaiveDate::from_ymd_opt(SYNTH_START.0, SYNTH_START.1, SYNTH_START.2).expect("valid start date");
    let dates: Vec<NaiveDate> = (0..t).map(|k| start + chrono::Days::new(k as u64)).collect();

    let mut fuels = [Ar1::new(25.0, 0.97, 4.0), Ar1::new(20.0, 0.97, 3.0), Ar1::new(80.0, 0.97, 8.0), Ar1::new(60.0, 0.97, 6.0)];
    let mut load_level = Ar1::new(0.0, 0.8, 1.0);
    let mut res_level = Ar1::new(0.0, 0.7, 1.0);
    let profile: Vec<f64> = (0..d).map(|h| 50.0 + 12.0 * (std::f64::consts::PI * (h as f64 + 0.5) / d as f64).sin()).collect();
    let sigma: Vec<f64> = (0..d).map(|h| 4.0 + 2.0 * h as f64 / d as f64).collect();
    let mu_coef = [5.0, 0.5, -0.6, 0.8];
    let band_coef = match spec.dependence {
        Dependence::TimeVaryingCd => [-0.6, 0.45],
        Dependence::Static => [-0.6, 0.0],
        Dependence::Diagonal => [0.0, 0.0],
    };

    let mut prices = DMatrix::zeros(t, d);
    let mut load = DMatrix::zeros(t, d);
    let mut res = DMatrix::zeros(t, d);
    let mut f = [Vec::with_capacity(t), Vec::with_capacity(t), Vec::with_capacity(t), Vec::with_capacity(t)];
    let mut mus = Vec::with_capacity(t);
    let mut factors = Vec::with_capacity(t);
    for day in 0..t {
        for (k, p) in fuels.iter_mut().enumerate() {
            f[k].push(p.step(&mut rng));
        }
        let a = load_level.step(&mut rng);
        let z = res_level.step(&mut rng);
        for h in 0..d {
            let e1: f64 = rng.sample(StandardNormal);
            let e2: f64 = rng.sample(StandardNormal);
            load[(day, h)] = profile[h] * (1.0 + 0.08 * a) + 1.5 * e1;
            let solar = (std::f64::consts::PI * (h as f64 + 0.5) / d as f64).sin();
            res[(day, h)] = (15.0 + 6.0 * solar) * (1.0 + 0.35 * z) + 1.0 * e2;
        }
        let mu = DVector::from_fn(d, |h, _| {
            mu_coef[0] + mu_coef[1] * load[(day, h)] + mu_coef[2] * res[(day, h)] + mu_coef[3] * f[1][day]
        });
        let band = band_coef[0] + band_coef[1] * z.clamp(-2.5, 2.5);
        let mut l = DMatrix::zeros(d, d);
        for h in 0..d {
            l[(h, h)] = 1.0 / sigma[h];
            if h > 0 {
                l[(h, h - 1)] = band / sigma[h];
            }
        }
        let params = MvParams::new(mu.clone(), ScaleParam::Cd(CholeskyPrecision::new(l.clone())?), Some(SYNTH_NU))?;
        let y = distributions::sample_with(Family::StudentT, &params, 1, &mut rng)?;
        prices.set_row(day, &y.row(0));
        mus.push(mu);
        factors.push(l);
    }
    let [eua, gas, coal, oil] = f;
    let frame = MarketFrame { dates, prices, res, load, eua, gas, coal, oil };
    frame.validate()?;
    Ok(SynthData { frame, truth: SynthTruth { nu: SYNTH_NU, mu: mus, factor: factors, mu_coef, band_coef } })
}
