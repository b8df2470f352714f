//! Special functions: digamma/trigamma, the standard normal CDF and quantile,
//! and the location-scale Student-t density, CDF and quantile.
//!
//! `ln_gamma`, the regularized incomplete beta and the complementary error
//! function come from `statrs`; the rest is implemented here.

use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, SQRT_2};

use statrs::function::{beta, erf, gamma};

use crate::error::{Error, Result};

pub fn ln_gamma(x: f64) -> f64 {
    gamma::ln_gamma(x)
}

/// ψ(x) by upward recurrence to x ≥ 6 followed by the asymptotic series.
pub fn digamma(x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::invalid(format!("digamma requires x > 0, got {x}")));
    }
    let mut x = x;
    let mut acc = 0.0;
    while x < 6.0 {
        acc -= 1.0 / x;
        x += 1.0;
    }
    let r = 1.0 / (x * x);
    let series = r
        * (1.0 / 12.0
            - r * (1.0 / 120.0
                - r * (1.0 / 252.0
                    - r * (1.0 / 240.0 - r * (1.0 / 132.0 - r * (691.0 / 32760.0 - r / 12.0))))));
    Ok(acc + x.ln() - 0.5 / x - series)
}

/// ψ′(x) by upward recurrence to x ≥ 6 followed by the asymptotic series.
pub fn trigamma(x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::invalid(format!("trigamma requires x > 0, got {x}")));
    }
    let mut x = x;
    let mut acc = 0.0;
    while x < 6.0 {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let r = 1.0 / (x * x);
    let series = 1.0 / x
        + 0.5 * r
        + (r / x)
            * (1.0 / 6.0
                - r * (1.0 / 30.0
                    - r * (1.0 / 42.0
                        - r * (1.0 / 30.0 - r * (5.0 / 66.0 - r * (691.0 / 2730.0 - r * 7.0 / 6.0))))));
    Ok(acc + series)
}

/// Standard normal CDF.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / SQRT_2)
}

/// Standard normal density.
pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// Standard normal quantile, refined by one Halley step on the CDF.
pub fn norm_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let x = -SQRT_2 * erf::erfc_inv(2.0 * p);
    let e = norm_cdf(x) - p;
    let u = e / norm_pdf(x);
    if u.is_finite() {
        x - u / (1.0 + 0.5 * x * u)
    } else {
        x
    }
}

/// Parameters of a univariate location-scale Student-t.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StudentT {
    pub loc: f64,
    pub scale: f64,
    pub df: f64,
}

impl StudentT {
    pub fn new(loc: f64, scale: f64, df: f64) -> Result<Self> {
        if !loc.is_finite() || !(scale > 0.0) || !scale.is_finite() || !(df > 0.0) {
            return Err(Error::invalid(format!(
                "student-t requires finite loc, scale > 0 and df > 0 (loc={loc}, scale={scale}, df={df})"
            )));
        }
        Ok(Self { loc, scale, df })
    }

    pub fn ln_pdf(&self, y: f64) -> f64 {
        let z = (y - self.loc) / self.scale;
        let v = self.df;
        ln_gamma((v + 1.0) / 2.0) - ln_gamma(v / 2.0) - 0.5 * (v * PI).ln() - self.scale.ln()
            - 0.5 * (v + 1.0) * (z * z / v).ln_1p()
    }

    /// Standardized CDF at `z = (y − loc)/scale`.
    pub fn std_cdf(df: f64, z: f64) -> f64 {
        if z == 0.0 {
            return 0.5;
        }
        if z.is_infinite() {
            return if z > 0.0 { 1.0 } else { 0.0 };
        }
        let z2 = z * z;
        // tail = P(T > |z|) = I_{v/(v+z²)}(v/2, 1/2) / 2
        let tail = if z2 < df {
            let x = z2 / (df + z2);
            0.5 * (1.0 - beta::beta_reg(0.5, df / 2.0, x))
        } else {
            let x = df / (df + z2);
            0.5 * beta::beta_reg(df / 2.0, 0.5, x)
        };
        if z > 0.0 {
            1.0 - tail
        } else {
            tail
        }
    }

    pub fn cdf(&self, y: f64) -> f64 {
        Self::std_cdf(self.df, (y - self.loc) / self.scale)
    }

    fn std_pdf(df: f64, z: f64) -> f64 {
        (ln_gamma((df + 1.0) / 2.0) - ln_gamma(df / 2.0) - 0.5 * (df * PI).ln()
            - 0.5 * (df + 1.0) * (z * z / df).ln_1p())
        .exp()
    }

    /// Standardized quantile: safeguarded Newton iteration on the CDF.
    pub fn std_quantile(df: f64, p: f64) -> f64 {
        if p <= 0.0 {
            return f64::NEG_INFINITY;
        }
        if p >= 1.0 {
            return f64::INFINITY;
        }
        if p == 0.5 {
            return 0.0;
        }
        // work in the lower half and reflect
        let (q, sign) = if p > 0.5 { (1.0 - p, 1.0) } else { (p, -1.0) };
        let mut x = norm_quantile(q).min(-1e-8);
        let mut lo = x;
        while Self::std_cdf(df, lo) > q {
            lo *= 2.0;
            if lo < -1e300 {
                break;
            }
        }
        let mut hi = 0.0;
        if x < lo {
            x = lo;
        }
        for _ in 0..200 {
            let f = Self::std_cdf(df, x) - q;
            if f == 0.0 {
                break;
            }
            if f > 0.0 {
                hi = x;
            } else {
                lo = x;
            }
            let d = Self::std_pdf(df, x);
            let mut next = x - f / d;
            if !next.is_finite() || next <= lo || next >= hi {
                next = 0.5 * (lo + hi);
            }
            if (next - x).abs() <= 1e-15 * x.abs().max(1e-300) {
                x = next;
                break;
            }
            x = next;
        }
        sign * -x
    }

    pub fn quantile(&self, p: f64) -> f64 {
        self.loc + self.scale * Self::std_quantile(self.df, p)
    }
}
