use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::engine::fit_batch;
use super::{ModelSpec, ModelState};
use crate::error::{Error, Result};

/// Relative IC improvement required to accept the next regularization level.
pub const EARLY_STOP_REL: f64 = 1e-4;

/// Convergence settings for the fits compared along the path. Neighbouring
/// levels differ by a few IC units, well below what the online tolerances
/// resolve once the log-likelihood is in the thousands.
pub const PATH_TOL_OUTER: f64 = 2e-6;
pub const PATH_TOL_INNER: f64 = 2e-6;
pub const PATH_MAX_OUTER: usize = 30;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaDiagnostics {
    pub alpha: usize,
    pub loglik: f64,
    pub nonzero: usize,
    pub ic: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathFit {
    pub model: ModelState,
    pub alpha: usize,
    pub diagnostics: Vec<AlphaDiagnostics>,
}

/// Fits α = 0, 1, … with warm starts and stops once the information
/// criterion stops improving; the best level is returned and stays fixed.
/// The returned model carries `spec` unchanged, so online updates keep the
/// configured tolerances.
pub fn path_fit(spec: &ModelSpec, y: &DMatrix<f64>, designs: &[DMatrix<f64>], alpha_max: usize) -> Result<PathFit> {
    let cap = spec.config.alpha_cap();
    let alpha_max = alpha_max.min(cap);
    let ic = spec.config.criterion;
    let mut tight = spec.clone();
    tight.config.tol_outer = tight.config.tol_outer.min(PATH_TOL_OUTER);
    tight.config.tol_inner = tight.config.tol_inner.min(PATH_TOL_INNER);
    tight.config.max_outer = tight.config.max_outer.max(PATH_MAX_OUTER);
    let spec_in = spec;
    let spec = &tight;
    let mut diags = Vec::new();
    let mut best = fit_batch(spec, y, designs, 0, None)?;
    let n_eff = |m: &ModelState| m.coords.iter().map(|c| c.gram.n_eff()).fold(0.0, f64::max);
    let mut best_ic = ic.value(best.loglik, best.n_nonzero(), n_eff(&best));
    diags.push(AlphaDiagnostics { alpha: 0, loglik: best.loglik, nonzero: best.n_nonzero(), ic: best_ic, error: None });

    for alpha in 1..=alpha_max {
        let cand = match fit_batch(spec, y, designs, alpha, Some(&best)) {
            Ok(m) => m,
            Err(e) => {
                diags.push(AlphaDiagnostics { alpha, loglik: f64::NAN, nonzero: 0, ic: f64::NAN, error: Some(e.to_string()) });
                break;
            }
        };
        let v = ic.value(cand.loglik, cand.n_nonzero(), n_eff(&cand));
        diags.push(AlphaDiagnostics { alpha, loglik: cand.loglik, nonzero: cand.n_nonzero(), ic: v, error: None });
        if !(v < best_ic - EARLY_STOP_REL * best_ic.abs()) {
            break;
        }
        best = cand;
        best_ic = v;
    }
    if !best.loglik.is_finite() {
        return Err(Error::Diverged("no regularization level produced a finite fit".into()));
    }
    best.spec = spec_in.clone();
    let alpha = best.alpha();
    Ok(PathFit { model: best, alpha, diagnostics: diags })
}
