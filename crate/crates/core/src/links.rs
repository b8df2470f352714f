//! Link functions `η = g(θ)` mapping constrained distribution parameters onto the
//! real line, with analytic first and second derivatives.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower clamp of every positive inverse link.
pub const INVERSE_FLOOR: f64 = 1e-10;
/// Upper clamp of every positive inverse link.
pub const INVERSE_CEIL: f64 = 1e10;
/// Default sigmoid steepness of [`LinkKind::DifferentiableLogIdent`].
pub const DEFAULT_LOGIDENT_STEEPNESS: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum LinkKind {
    Identity,
    Log,
    Sqrt,
    /// `log(x)` below one, `x − 1` above; continuous but only C¹ at one.
    LogIdent,
    /// LogIdent blended by a logistic sigmoid of steepness `k` above one.
    DifferentiableLogIdent { k: f64 },
    InverseSoftPlus,
    /// `log(x − 2)`, keeps degrees of freedom above two.
    LogShiftTwo,
}

impl LinkKind {
    /// Infimum of the admissible domain (`None` for the whole real line).
    pub fn lower_bound(&self) -> Option<f64> {
        match self {
            LinkKind::Identity => None,
            LinkKind::LogShiftTwo => Some(2.0),
            _ => Some(0.0),
        }
    }

    fn check_domain(&self, theta: f64) -> Result<()> {
        if !theta.is_finite() {
            return Err(Error::invalid(format!("{self}: non-finite argument {theta}")));
        }
        if let Some(lb) = self.lower_bound() {
            if theta <= lb {
                return Err(Error::invalid(format!("{self}: argument {theta} outside ({lb}, ∞)")));
            }
        }
        if let LinkKind::DifferentiableLogIdent { k } = self {
            if !(*k > 0.0) {
                return Err(Error::invalid(format!("logident steepness must be positive, got {k}")));
            }
        }
        Ok(())
    }

    /// `η = g(θ)`.
    pub fn eval(&self, theta: f64) -> Result<f64> {
        self.check_domain(theta)?;
        Ok(match *self {
            LinkKind::Identity => theta,
            LinkKind::Log => theta.ln(),
            LinkKind::Sqrt => theta.sqrt(),
            LinkKind::LogIdent => {
                if theta < 1.0 {
                    theta.ln()
                } else {
                    theta - 1.0
                }
            }
            LinkKind::DifferentiableLogIdent { k } => {
                if theta < 1.0 {
                    theta.ln()
                } else {
                    let f = logistic(k * (theta - 1.0));
                    (1.0 - f) * theta.ln() + f * (theta - 1.0)
                }
            }
            LinkKind::InverseSoftPlus => inverse_softplus(theta),
            LinkKind::LogShiftTwo => (theta - 2.0).ln(),
        })
    }

    /// `θ = g⁻¹(η)`, clamped strictly inside the domain.
    pub fn inverse(&self, eta: f64) -> f64 {
        let clamp = |x: f64| x.clamp(INVERSE_FLOOR, INVERSE_CEIL);
        match *self {
            LinkKind::Identity => eta,
            LinkKind::Log => clamp(eta.exp()),
            LinkKind::Sqrt => clamp(eta.max(INVERSE_FLOOR).powi(2)),
            LinkKind::LogIdent => clamp(if eta < 0.0 { eta.exp() } else { eta + 1.0 }),
            LinkKind::DifferentiableLogIdent { k } => {
                clamp(if eta < 0.0 { eta.exp() } else { logident_inverse_blended(k, eta) })
            }
            LinkKind::InverseSoftPlus => clamp(softplus(eta)),
            LinkKind::LogShiftTwo => 2.0 + clamp(eta.exp()),
        }
    }

    /// `g′(θ)`.
    pub fn deriv1(&self, theta: f64) -> Result<f64> {
        self.check_domain(theta)?;
        Ok(match *self {
            LinkKind::Identity => 1.0,
            LinkKind::Log => 1.0 / theta,
            LinkKind::Sqrt => 0.5 / theta.sqrt(),
            LinkKind::LogIdent => {
                if theta < 1.0 {
                    1.0 / theta
                } else {
                    1.0
                }
            }
            LinkKind::DifferentiableLogIdent { k } => {
                if theta < 1.0 {
                    1.0 / theta
                } else {
                    let (f, f1, _) = logistic_derivs(k, theta);
                    let gap = theta - 1.0 - theta.ln();
                    (1.0 - f) / theta + f + f1 * gap
                }
            }
            // d/dx log(eˣ − 1) = 1 / (1 − e⁻ˣ)
            LinkKind::InverseSoftPlus => -1.0 / (-theta).exp_m1(),
            LinkKind::LogShiftTwo => 1.0 / (theta - 2.0),
        })
    }

    /// `g″(θ)`.
    pub fn deriv2(&self, theta: f64) -> Result<f64> {
        self.check_domain(theta)?;
        Ok(match *self {
            LinkKind::Identity => 0.0,
            LinkKind::Log => -1.0 / (theta * theta),
            LinkKind::Sqrt => -0.25 * theta.powf(-1.5),
            LinkKind::LogIdent => {
                if theta < 1.0 {
                    -1.0 / (theta * theta)
                } else {
                    0.0
                }
            }
            LinkKind::DifferentiableLogIdent { k } => {
                if theta < 1.0 {
                    -1.0 / (theta * theta)
                } else {
                    let (f, f1, f2) = logistic_derivs(k, theta);
                    let gap = theta - 1.0 - theta.ln();
                    -f1 / theta - (1.0 - f) / (theta * theta)
                        + f1
                        + f2 * gap
                        + f1 * (1.0 - 1.0 / theta)
                }
            }
            LinkKind::InverseSoftPlus => {
                let em = (-theta).exp_m1(); // e⁻ˣ − 1
                -(-theta).exp() / (em * em)
            }
            LinkKind::LogShiftTwo => -1.0 / ((theta - 2.0) * (theta - 2.0)),
        })
    }
}

impl fmt::Display for LinkKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LinkKind::Identity => write!(f, "Identity"),
            LinkKind::Log => write!(f, "Log"),
            LinkKind::Sqrt => write!(f, "Sqrt"),
            LinkKind::LogIdent => write!(f, "LogIdent"),
            LinkKind::DifferentiableLogIdent { k } => write!(f, "DifferentiableLogIdent({k})"),
            LinkKind::InverseSoftPlus => write!(f, "InverseSoftPlus"),
            LinkKind::LogShiftTwo => write!(f, "LogShiftTwo"),
        }
    }
}

impl FromStr for LinkKind {
    type Err = Error;

    /// Case-insensitive tag, optionally `DifferentiableLogIdent(k)`.
    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().to_ascii_lowercase();
        let kind = match t.as_str() {
            "identity" => LinkKind::Identity,
            "log" => LinkKind::Log,
            "sqrt" => LinkKind::Sqrt,
            "logident" => LinkKind::LogIdent,
            "inversesoftplus" => LinkKind::InverseSoftPlus,
            "logshifttwo" => LinkKind::LogShiftTwo,
            "differentiablelogident" => LinkKind::DifferentiableLogIdent {
                k: DEFAULT_LOGIDENT_STEEPNESS,
            },
            other => {
                let inner = other
                    .strip_prefix("differentiablelogident(")
                    .and_then(|r| r.strip_suffix(')'))
                    .ok_or_else(|| Error::invalid(format!("unknown link '{s}'")))?;
                let k: f64 = inner
                    .trim()
                    .parse()
                    .map_err(|_| Error::invalid(format!("bad steepness in '{s}'")))?;
                if !(k > 0.0) {
                    return Err(Error::invalid(format!("steepness must be positive in '{s}'")));
                }
                LinkKind::DifferentiableLogIdent { k }
            }
        };
        Ok(kind)
    }
}

fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Logistic `f(θ) = σ(k(θ − 1))` and its first two derivatives in θ.
fn logistic_derivs(k: f64, theta: f64) -> (f64, f64, f64) {
    let f = logistic(k * (theta - 1.0));
    let f1 = k * f * (1.0 - f);
    let f2 = k * f1 * (1.0 - 2.0 * f);
    (f, f1, f2)
}

/// `log(1 + eˣ)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// `log(eˣ − 1)` for `x > 0`.
pub fn inverse_softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-(-x).exp()).ln_1p()
    } else {
        x.exp_m1().ln()
    }
}

/// Inverse of the blended branch (η ≥ 0, θ ≥ 1), Newton with bisection fallback.
fn logident_inverse_blended(k: f64, eta: f64) -> f64 {
    let link = LinkKind::DifferentiableLogIdent { k };
    let g = |t: f64| {
        let f = logistic(k * (t - 1.0));
        (1.0 - f) * t.ln() + f * (t - 1.0)
    };
    // g(θ) ≤ θ − 1 on θ ≥ 1 once the blend has saturated, and g is increasing
    let mut lo = 1.0;
    let mut hi = (eta + 1.0).max(2.0);
    while g(hi) < eta {
        hi = 2.0 * hi;
        if hi > INVERSE_CEIL {
            return INVERSE_CEIL;
        }
    }
    let mut x = (eta + 1.0).clamp(lo, hi);
    for _ in 0..100 {
        let r = g(x) - eta;
        if r == 0.0 {
            return x;
        }
        if r > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        let d = link.deriv1(x).unwrap_or(1.0);
        let mut next = x - r / d;
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - x).abs() <= 1e-15 * x {
            return next;
        }
        x = next;
    }
    x
}
