//! Design rows for every distribution parameter of the day-ahead models.
//!
//! Designs are indexed by a [`DesignLayout`]: one location design per hour,
//! one scale design per hour, one per Cholesky off-diagonal pair, one first
//! low-rank column design per hour, a shared weekday design for the second
//! low-rank column and a shared degrees-of-freedom design.

use std::ops::Range;

use mvdr::distributions::Coordinate;
use mvdr::estimator::DesignChoice;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::audit::DayAccess;
use crate::error::{Result, StudyError};

/// Own-hour price lags in the location design.
pub const LAGS: usize = 7;
/// First day index with a complete lag history.
pub const FIRST_DAY: usize = LAGS;
/// Window of the rolling covariance.
pub const COV_WINDOW: usize = 7;
/// Diagonal loading of the rolling covariance.
pub const COV_LOADING: f64 = 1e-8;
/// Weekday dummies, Monday is the reference.
pub const N_WEEKDAY: usize = 6;
/// Columns of a scale design.
pub const SCALE_WIDTH: usize = 11;
/// Columns of the first low-rank column design.
pub const V0_WIDTH: usize = 15;
/// Columns of the degrees-of-freedom design.
pub const NU_WIDTH: usize = 14;

/// One row per design id for a single day.
pub type DesignDay = Vec<DVector<f64>>;

/// `sign(a)·sqrt(|a|)`.
pub fn signed_square(a: f64) -> f64 {
    a.signum() * a.abs().sqrt()
}

/// Empirical quantile with linear interpolation between order statistics.
pub fn quantile_linear(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

/// Sample covariance (denominator n−1) of the rows of `window`.
pub fn rolling_covariance(window: &[DVector<f64>]) -> DMatrix<f64> {
    let n = window.len();
    let d = window[0].len();
    let mean = window.iter().fold(DVector::zeros(d), |acc, r| acc + r) / n as f64;
    let mut s = DMatrix::zeros(d, d);
    for r in window {
        let c = r - &mean;
        s += &c * c.transpose();
    }
    s / (n as f64 - 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DesignLayout {
    pub dim: usize,
}

impl DesignLayout {
    pub fn new(dim: usize) -> Self {
        Self { dim }
    }

    fn n_off(&self) -> usize {
        self.dim * (self.dim - 1) / 2
    }

    pub fn mu(&self, h: usize) -> usize {
        h
    }

    pub fn scale(&self, h: usize) -> usize {
        self.dim + h
    }

    /// Design of the off-diagonal pair `i > j`.
    pub fn scale_off(&self, i: usize, j: usize) -> usize {
        debug_assert!(i > j);
        2 * self.dim + i * (i - 1) / 2 + j
    }

    pub fn v0(&self, h: usize) -> usize {
        2 * self.dim + self.n_off() + h
    }

    pub fn v1(&self) -> usize {
        3 * self.dim + self.n_off()
    }

    pub fn nu(&self) -> usize {
        self.v1() + 1
    }

    pub fn n_designs(&self) -> usize {
        self.nu() + 1
    }

    pub fn mu_width(&self) -> usize {
        1 + LAGS + (self.dim - 1) + 4 + 4 + 4 + N_WEEKDAY
    }

    pub fn width(&self, id: usize) -> usize {
        if id < self.dim {
            self.mu_width()
        } else if id < self.v0(0) {
            SCALE_WIDTH
        } else if id < self.v1() {
            V0_WIDTH
        } else if id == self.v1() {
            N_WEEKDAY
        } else {
            NU_WIDTH
        }
    }

    /// Columns left on their natural scale: intercepts and dummies.
    pub fn fixed_columns(&self, id: usize) -> Vec<bool> {
        let w = self.width(id);
        if id < self.dim {
            (0..w).map(|c| c == 0 || c >= w - N_WEEKDAY).collect()
        } else if id == self.v1() {
            vec![true; w]
        } else if id == self.nu() {
            (0..w).map(|c| c == 0 || (2..2 + N_WEEKDAY).contains(&c)).collect()
        } else {
            (0..w).map(|c| c == 0).collect()
        }
    }

    /// Design of a coordinate of the full `dim`-variate model.
    pub fn choice(&self, coord: Coordinate) -> DesignChoice {
        match coord {
            Coordinate::Location(h) => DesignChoice::with_intercept(self.mu(h)),
            Coordinate::Chol(i, j) if i == j => DesignChoice::with_intercept(self.scale(i)),
            Coordinate::Chol(i, j) => DesignChoice::with_intercept(self.scale_off(i, j)),
            Coordinate::LraDiag(h) => DesignChoice::with_intercept(self.scale(h)),
            Coordinate::LraV(_, 1) => DesignChoice::without_intercept(self.v1()),
            Coordinate::LraV(h, _) => DesignChoice::with_intercept(self.v0(h)),
            Coordinate::Dof => DesignChoice::with_intercept(self.nu()),
        }
    }

    /// Design of a coordinate of the univariate model for hour `h`.
    pub fn univariate_choice(&self, h: usize, coord: Coordinate) -> DesignChoice {
        match coord {
            Coordinate::Location(_) => DesignChoice::with_intercept(self.mu(h)),
            Coordinate::Dof => DesignChoice::with_intercept(self.nu()),
            _ => DesignChoice::with_intercept(self.scale(h)),
        }
    }
}

/// Raw (unstandardized) design rows for target day `t`.
///
/// Reads prices of days `t−7 … t−1` and fundamentals of day `t`.
pub fn build_features<A: DayAccess + ?Sized>(src: &A, t: usize) -> Result<DesignDay> {
    if t < FIRST_DAY {
        return Err(StudyError::History(format!("day {t} has fewer than {LAGS} lag days")));
    }
    if t >= src.n_days() {
        return Err(StudyError::History(format!("day {t} beyond the {} available days", src.n_days())));
    }
    let d = src.dim();
    let layout = DesignLayout::new(d);
    let lags: Vec<DVector<f64>> = (1..=LAGS).map(|l| src.prices(t - l)).collect();
    let prev = &lags[0];
    let prev_vals: Vec<f64> = prev.iter().copied().collect();
    let mean_prev = prev.mean();
    let (min, max) = prev_vals.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let q10 = quantile_linear(&prev_vals, 0.1);
    let q90 = quantile_linear(&prev_vals, 0.9);
    let mut cov = rolling_covariance(&lags[..COV_WINDOW]);
    for i in 0..d {
        cov[(i, i)] += COV_LOADING;
    }
    let load: Vec<f64> = (0..d).map(|h| src.load(t, h)).collect();
    let res: Vec<f64> = (0..d).map(|h| src.res(t, h)).collect();
    let load_base = src.load_base(t);
    let res_base = src.res_base(t);
    let fuels = src.fuels(t);
    let wd = src.weekday(t);
    let dummies: Vec<f64> = (1..=N_WEEKDAY).map(|k| if wd == k { 1.0 } else { 0.0 }).collect();

    let mut rows = vec![DVector::zeros(0); layout.n_designs()];
    for h in 0..d {
        let mut x = Vec::with_capacity(layout.mu_width());
        x.push(1.0);
        x.extend(lags.iter().map(|r| r[h]));
        x.extend((0..d).filter(|&k| k != h).map(|k| prev[k]));
        x.extend([min, max, q10, q90, load[h], res[h], load_base, res_base]);
        x.extend(fuels);
        x.extend(&dummies);
        rows[layout.mu(h)] = DVector::from_vec(x);

        let scale_row = |c: f64, i: usize| {
            let mut x = vec![1.0, mean_prev, signed_square(c), load_base, res_base, load[i], res[i]];
            x.extend(fuels);
            DVector::from_vec(x)
        };
        rows[layout.scale(h)] = scale_row(cov[(h, h)], h);
        for j in 0..h {
            rows[layout.scale_off(h, j)] = scale_row(cov[(h, j)], h);
        }

        let mut v = vec![1.0, mean_prev, signed_square(cov[(h, h)]), min, max, q10, q90, load_base, res_base, load[h], res[h]];
        v.extend(fuels);
        rows[layout.v0(h)] = DVector::from_vec(v);
    }
    rows[layout.v1()] = DVector::from_vec(dummies.clone());
    let mut nu = vec![1.0, mean_prev];
    nu.extend(&dummies);
    nu.extend([load_base, res_base]);
    nu.extend(fuels);
    rows[layout.nu()] = DVector::from_vec(nu);
    Ok(rows)
}

/// Column means and standard deviations frozen on the training window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<DVector<f64>>,
    pub sd: Vec<DVector<f64>>,
}

impl Standardizer {
    /// Fits on raw training rows; intercepts and dummies are left untouched.
    pub fn fit(layout: &DesignLayout, days: &[DesignDay]) -> Result<Self> {
        if days.is_empty() {
            return Err(StudyError::History("no training rows to standardize on".into()));
        }
        let n = days.len() as f64;
        let mut mean = Vec::with_capacity(layout.n_designs());
        let mut sd = Vec::with_capacity(layout.n_designs());
        for id in 0..layout.n_designs() {
            let fixed = layout.fixed_columns(id);
            let w = fixed.len();
            let mut m = DVector::zeros(w);
            let mut s = DVector::from_element(w, 1.0);
            for c in (0..w).filter(|&c| !fixed[c]) {
                let mu = days.iter().map(|r| r[id][c]).sum::<f64>() / n;
                let var = days.iter().map(|r| (r[id][c] - mu).powi(2)).sum::<f64>() / n;
                m[c] = mu;
                s[c] = if var.sqrt() > 1e-12 * mu.abs().max(1.0) { var.sqrt() } else { 1.0 };
            }
            mean.push(m);
            sd.push(s);
        }
        Ok(Self { mean, sd })
    }

    pub fn apply(&self, day: &mut DesignDay) {
        for ((x, m), s) in day.iter_mut().zip(&self.mean).zip(&self.sd) {
            for c in 0..x.len() {
                x[c] = (x[c] - m[c]) / s[c];
            }
        }
    }
}

/// Responses and stacked standardized designs of a block of days.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSet {
    pub days: Range<usize>,
    /// N × D prices.
    pub y: DMatrix<f64>,
    /// One N × J matrix per design id.
    pub designs: Vec<DMatrix<f64>>,
}

impl TrainSet {
    pub fn n(&self) -> usize {
        self.y.nrows()
    }

    pub fn y_row(&self, n: usize) -> DVector<f64> {
        self.y.row(n).transpose()
    }

    /// Design rows of the `n`-th day of the block.
    pub fn rows(&self, n: usize) -> DesignDay {
        self.designs.iter().map(|x| x.row(n).transpose()).collect()
    }
}

/// Raw feature rows of `days`.
pub fn raw_rows<A: DayAccess + ?Sized>(src: &A, days: Range<usize>) -> Result<Vec<DesignDay>> {
    days.map(|t| build_features(src, t)).collect()
}

/// Stacks standardized rows and prices of `days` into a [`TrainSet`].
pub fn training_set<A: DayAccess + ?Sized>(src: &A, std: &Standardizer, days: Range<usize>) -> Result<TrainSet> {
    let layout = DesignLayout::new(src.dim());
    let n = days.len();
    let mut designs: Vec<DMatrix<f64>> = (0..layout.n_designs()).map(|id| DMatrix::zeros(n, layout.width(id))).collect();
    let mut y = DMatrix::zeros(n, src.dim());
    for (k, t) in days.clone().enumerate() {
        let mut rows = build_features(src, t)?;
        std.apply(&mut rows);
        for (id, r) in rows.iter().enumerate() {
            designs[id].set_row(k, &r.transpose());
        }
        y.set_row(k, &src.prices(t).transpose());
    }
    Ok(TrainSet { days, y, designs })
}
