//! Ensemble scoring rules and the Diebold–Mariano test.
//!
//! Ensembles are `M × D` matrices, one sample per row. Lower is better for
//! every rule.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::copula::{copula_loglik, CopulaState};
use crate::distributions::{loglik, Family, MvParams};
use crate::error::{Error, Result};
use crate::linalg;
use crate::special::{norm_cdf, StudentT};

/// Minimum series length for [`dm_test`].
pub const DM_MIN_LEN: usize = 30;
/// Default ensemble size.
pub const DEFAULT_ENSEMBLE: usize = 2500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ScoreRule {
    Rmse,
    Mae,
    Crps,
    Es,
    Vs05,
    Vs1,
    Dss,
    Ls,
}

impl ScoreRule {
    pub const ALL: [ScoreRule; 8] = [
        ScoreRule::Rmse,
        ScoreRule::Mae,
        ScoreRule::Crps,
        ScoreRule::Es,
        ScoreRule::Vs05,
        ScoreRule::Vs1,
        ScoreRule::Dss,
        ScoreRule::Ls,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScoreRule::Rmse => "RMSE",
            ScoreRule::Mae => "MAE",
            ScoreRule::Crps => "CRPS",
            ScoreRule::Es => "ES",
            ScoreRule::Vs05 => "VS0.5",
            ScoreRule::Vs1 => "VS1",
            ScoreRule::Dss => "DSS",
            ScoreRule::Ls => "LS",
        }
    }
}

impl fmt::Display for ScoreRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScoreRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ScoreRule::ALL
            .into_iter()
            .find(|r| r.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::invalid(format!("unknown score rule '{s}'")))
    }
}

fn check(y: &DVector<f64>, x: &DMatrix<f64>, min_m: usize) -> Result<()> {
    if x.ncols() != y.len() {
        return Err(Error::shape(format!("ensemble has {} columns, observation {}", x.ncols(), y.len())));
    }
    if x.nrows() < min_m {
        return Err(Error::invalid(format!("ensemble needs at least {min_m} members, got {}", x.nrows())));
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite ensemble or observation"));
    }
    Ok(())
}

pub fn ensemble_mean(x: &DMatrix<f64>) -> DVector<f64> {
    x.row_mean().transpose()
}

/// Coordinate-wise median (mean of the middle pair for even M).
pub fn ensemble_median(x: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_fn(x.ncols(), |d, _| {
        let mut c: Vec<f64> = x.column(d).iter().copied().collect();
        c.sort_by(f64::total_cmp);
        let m = c.len();
        if m % 2 == 1 {
            c[m / 2]
        } else {
            0.5 * (c[m / 2 - 1] + c[m / 2])
        }
    })
}

fn paired(y: &[DVector<f64>], ens: &[DMatrix<f64>]) -> Result<()> {
    if y.len() != ens.len() || y.is_empty() {
        return Err(Error::shape(format!("{} observations for {} ensembles", y.len(), ens.len())));
    }
    Ok(())
}

/// Root mean squared error of the ensemble-mean forecast over all days and dimensions.
pub fn rmse(y: &[DVector<f64>], ens: &[DMatrix<f64>]) -> Result<f64> {
    paired(y, ens)?;
    let mut s = 0.0;
    let mut n = 0usize;
    for (yt, xt) in y.iter().zip(ens) {
        check(yt, xt, 1)?;
        s += (yt - ensemble_mean(xt)).norm_squared();
        n += yt.len();
    }
    Ok((s / n as f64).sqrt())
}

/// Mean absolute error of the median forecast.
pub fn mae(y: &[DVector<f64>], ens: &[DMatrix<f64>]) -> Result<f64> {
    paired(y, ens)?;
    let mut s = 0.0;
    let mut n = 0usize;
    for (yt, xt) in y.iter().zip(ens) {
        check(yt, xt, 1)?;
        s += (yt - ensemble_median(xt)).abs().sum();
        n += yt.len();
    }
    Ok(s / n as f64)
}

/// Probability-weighted-moment CRPS, `mean|x − y| − ½ · mean_{i≠j}|x_i − x_j|`, via sorting.
pub fn crps_pwm(y: f64, x: &[f64]) -> Result<f64> {
    let m = x.len();
    if m < 2 {
        return Err(Error::invalid("CRPS needs at least two members"));
    }
    let mut s: Vec<f64> = x.to_vec();
    s.sort_by(f64::total_cmp);
    let mf = m as f64;
    let abs = s.iter().map(|v| (v - y).abs()).sum::<f64>() / mf;
    // Σ_{i<j} (x_(j) − x_(i)) = Σ_i (2i − M − 1) x_(i), i = 1..M
    let pair: f64 = s.iter().enumerate().map(|(i, v)| (2.0 * (i + 1) as f64 - mf - 1.0) * v).sum();
    Ok(abs - pair / (mf * (mf - 1.0)))
}

/// CRPS averaged over dimensions.
pub fn crps_mean(y: &DVector<f64>, x: &DMatrix<f64>) -> Result<f64> {
    check(y, x, 2)?;
    let mut s = 0.0;
    for d in 0..y.len() {
        let col: Vec<f64> = x.column(d).iter().copied().collect();
        s += crps_pwm(y[d], &col)?;
    }
    Ok(s / y.len() as f64)
}

/// Energy score with Euclidean norms, `(1/M)Σ‖y − x_m‖ − (1/(2M²))ΣΣ‖x_i − x_j‖`.
pub fn energy_score(y: &DVector<f64>, x: &DMatrix<f64>) -> Result<f64> {
    check(y, x, 1)?;
    let m = x.nrows();
    let d = x.ncols();
    let mf = m as f64;
    // members become contiguous columns
    let xt = x.transpose();
    let data = xt.as_slice();
    let row = |i: usize| &data[i * d..(i + 1) * d];
    let mut first = 0.0;
    for i in 0..m {
        first += row(i).iter().zip(y.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    }
    let mut pair = 0.0;
    for i in 0..m {
        let a = row(i);
        for j in 0..i {
            pair += a.iter().zip(row(j)).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt();
        }
    }
    // the double sum counts each unordered pair twice
    Ok(first / mf - pair / (mf * mf))
}

/// Dawid–Sebastiani score from the ensemble mean and covariance (M − 1 denominator).
pub fn dss(y: &DVector<f64>, x: &DMatrix<f64>) -> Result<f64> {
    check(y, x, 2)?;
    let m = x.nrows();
    let mu = ensemble_mean(x);
    let c = DMatrix::from_fn(x.nrows(), x.ncols(), |i, k| x[(i, k)] - mu[k]);
    let mut cov = c.transpose() * &c / (m - 1) as f64;
    linalg::symmetrize(&mut cov);
    let l = load_until_pd(&cov)?;
    let r = y - &mu;
    let a = linalg::forward_sub(&l, &r);
    Ok(linalg::chol_logdet(&l) + a.norm_squared())
}

fn load_until_pd(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if let Ok(l) = linalg::cholesky(cov) {
        return Ok(l);
    }
    let d = cov.nrows();
    let scale = (cov.trace() / d as f64).max(f64::MIN_POSITIVE);
    for eps in [1e-10, 1e-8, 1e-6, 1e-4] {
        let mut c = cov.clone();
        for i in 0..d {
            c[(i, i)] += eps * scale;
        }
        if let Ok(l) = linalg::cholesky(&c) {
            return Ok(l);
        }
    }
    Err(Error::Singular("ensemble covariance stays singular after diagonal loading".into()))
}

/// Raw variogram score `Σ_i Σ_j (|y_i − y_j|^p − mean_m |x_mi − x_mj|^p)²`.
pub fn variogram_raw(y: &DVector<f64>, x: &DMatrix<f64>, p: f64) -> Result<f64> {
    check(y, x, 1)?;
    if !(p > 0.0) {
        return Err(Error::invalid(format!("variogram order must be positive, got {p}")));
    }
    let d = y.len();
    let m = x.nrows() as f64;
    let mut s = 0.0;
    for i in 0..d {
        for j in 0..i {
            let obs = (y[i] - y[j]).abs().powf(p);
            let ens = x.column(i).iter().zip(x.column(j).iter()).map(|(a, b)| (a - b).abs().powf(p)).sum::<f64>() / m;
            s += 2.0 * (obs - ens).powi(2);
        }
    }
    Ok(s)
}

/// Reported variogram score `sqrt(raw / D²)`.
pub fn variogram_score(y: &DVector<f64>, x: &DMatrix<f64>, p: f64) -> Result<f64> {
    let d = y.len() as f64;
    Ok((variogram_raw(y, x, p)? / (d * d)).sqrt())
}

/// Negative joint log density of a multivariate model.
pub fn log_score(family: Family, params: &MvParams, y: &DVector<f64>) -> Result<f64> {
    Ok(-loglik(family, params, y)?)
}

/// Negative joint log density of a copula model.
pub fn copula_log_score(state: &CopulaState, marginals: &[StudentT], y: &DVector<f64>) -> Result<f64> {
    Ok(-copula_loglik(state, marginals, y)?)
}

/// All ensemble-based per-day scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DayScores {
    /// Sum of squared errors of the mean forecast (for RMSE aggregation).
    pub sse: f64,
    /// Sum of absolute errors of the median forecast.
    pub sae: f64,
    pub crps: f64,
    pub es: f64,
    pub vs05: f64,
    pub vs1: f64,
    pub dss: f64,
}

pub fn day_scores(y: &DVector<f64>, x: &DMatrix<f64>) -> Result<DayScores> {
    check(y, x, 2)?;
    Ok(DayScores {
        sse: (y - ensemble_mean(x)).norm_squared(),
        sae: (y - ensemble_median(x)).abs().sum(),
        crps: crps_mean(y, x)?,
        es: energy_score(y, x)?,
        vs05: variogram_score(y, x, 0.5)?,
        vs1: variogram_score(y, x, 1.0)?,
        dss: dss(y, x)?,
    })
}

/// Per-day values of one rule and their aggregate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSeries {
    pub rule: ScoreRule,
    pub values: Vec<f64>,
}

impl ScoreSeries {
    /// Mean of the per-day values.
    pub fn aggregate(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

/// Long-run variance estimator for [`dm_test`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum DmVariance {
    /// Lag-0 sample variance.
    #[default]
    Sample,
    /// Bartlett-weighted autocovariances up to ⌊T^{1/3}⌋.
    NeweyWest,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DmResult {
    pub statistic: f64,
    /// One-sided p-value for "A has lower expected score".
    pub p_a_better: f64,
    pub p_b_better: f64,
    /// The loss differential had zero variance.
    pub degenerate: bool,
}

/// Diebold–Mariano test on `Δ = s_A − s_B`.
pub fn dm_test(sa: &[f64], sb: &[f64], variance: DmVariance) -> Result<DmResult> {
    if sa.len() != sb.len() {
        return Err(Error::shape(format!("score series of lengths {} and {}", sa.len(), sb.len())));
    }
    let t = sa.len();
    if t < DM_MIN_LEN {
        return Err(Error::invalid(format!("Diebold–Mariano needs at least {DM_MIN_LEN} days, got {t}")));
    }
    let delta: Vec<f64> = sa.iter().zip(sb).map(|(a, b)| a - b).collect();
    if delta.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite score differential"));
    }
    let tf = t as f64;
    let mean = delta.iter().sum::<f64>() / tf;
    let var = match variance {
        DmVariance::Sample => delta.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (tf - 1.0),
        DmVariance::NeweyWest => {
            let lags = (tf.cbrt().floor() as usize).min(t - 1);
            let acov = |k: usize| (k..t).map(|i| (delta[i] - mean) * (delta[i - k] - mean)).sum::<f64>() / tf;
            let mut v = acov(0);
            for k in 1..=lags {
                v += 2.0 * (1.0 - k as f64 / (lags as f64 + 1.0)) * acov(k);
            }
            v
        }
    };
    let scale = delta.iter().map(|d| d.abs()).fold(0.0, f64::max);
    if !(var > 1e-28 * scale * scale) || var <= 0.0 {
        return Ok(DmResult { statistic: 0.0, p_a_better: 0.5, p_b_better: 0.5, degenerate: true });
    }
    let statistic = mean / (var / tf).sqrt();
    Ok(DmResult { statistic, p_a_better: norm_cdf(statistic), p_b_better: norm_cdf(-statistic), degenerate: false })
}

/// Pairwise matrix whose entry (row i, column j) is the p-value that the
/// column model j is better than the row model i. Diagonal is NaN.
pub fn dm_matrix(series: &[&[f64]], variance: DmVariance) -> Result<DMatrix<f64>> {
    let k = series.len();
    let mut out = DMatrix::from_element(k, k, f64::NAN);
    for i in 0..k {
        for j in 0..k {
            if i != j {
                out[(i, j)] = dm_test(series[i], series[j], variance)?.p_b_better;
            }
        }
    }
    Ok(out)
}
