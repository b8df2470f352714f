use serde::{Deserialize, Serialize};

/// `IC = −2ℓ + ν₀ K + ν₁ K log N + ν₂ K log log N`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InformationCriterion {
    pub nu0: f64,
    pub nu1: f64,
    pub nu2: f64,
}

impl InformationCriterion {
    pub const AIC: Self = Self { nu0: 2.0, nu1: 0.0, nu2: 0.0 };
    pub const BIC: Self = Self { nu0: 0.0, nu1: 1.0, nu2: 0.0 };
    pub const HQC: Self = Self { nu0: 0.0, nu1: 0.0, nu2: 2.0 };

    pub fn penalty(&self, k: usize, n_eff: f64) -> f64 {
        let k = k as f64;
        let ln = n_eff.max(1.0).ln();
        let lnln = if ln > 0.0 { ln.ln().max(0.0) } else { 0.0 };
        self.nu0 * k + self.nu1 * k * ln + self.nu2 * k * lnln
    }

    pub fn value(&self, loglik: f64, k: usize, n_eff: f64) -> f64 {
        -2.0 * loglik + self.penalty(k, n_eff)
    }

    /// Parses `aic`, `bic`, `hqc` (case-insensitive).
    pub fn from_name(name: &str) -> Option<Self> {
        match name.trim().to_ascii_lowercase().as_str() {
            "aic" => Some(Self::AIC),
            "bic" => Some(Self::BIC),
            "hqc" => Some(Self::HQC),
            _ => None,
        }
    }
}

/// How the log-likelihood along a λ path is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum IcMode {
    /// Re-evaluate the log-likelihood for each λ.
    Exact,
    /// Linear expansion in the coordinate around the most regularized fit.
    FirstOrder,
    /// Expansion in the predictor to second order around the current fit,
    /// using the IRLS score and weight.
    SecondOrder,
}

/// Index minimizing the criterion; ties go to the earlier (larger) λ.
pub fn select_lambda(ic: &InformationCriterion, loglik: &[f64], nonzero: &[usize], n_eff: f64) -> usize {
    let mut best = 0;
    let mut best_val = f64::INFINITY;
    for (i, (&l, &k)) in loglik.iter().zip(nonzero).enumerate() {
        let v = ic.value(l, k, n_eff);
        if v < best_val {
            best_val = v;
            best = i;
        }
    }
    best
}
