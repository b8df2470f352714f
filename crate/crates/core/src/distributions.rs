//! Multivariate Gaussian and Student-t log-likelihoods with coordinate-wise
//! first and second derivatives, and samplers.
//!
//! Both families share the form `ℓ = c + ½ log|Ω| + h(q)` with the quadratic
//! form `q = rᵀ Ω r`, `r = y − μ`. Every coordinate derivative is assembled from
//! the derivatives of `½ log|Ω|` and `q` through
//! `ℓ′ = ∂logdet + h′ ∂q` and `ℓ″ = ∂²logdet + h″ (∂q)² + h′ ∂²q`.
//! Second derivatives are exact diagonal Hessian entries; they can be positive
//! for the t family, which is why the IRLS weights are floored downstream.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::scale_param::{CholeskyPrecision, LowRankPrecision, ScaleParam};
use crate::special::{digamma, ln_gamma, trigamma};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Family {
    /// Multivariate normal.
    Normal,
    /// Multivariate Student-t.
    StudentT,
}

/// One scalar coordinate of the distribution parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Coordinate {
    Location(usize),
    /// Entry `(i, j)`, `j ≤ i`, of the lower-triangular precision factor.
    Chol(usize, usize),
    LraDiag(usize),
    /// Loading `V[d, r]`.
    LraV(usize, usize),
    Dof,
}

impl Coordinate {
    pub fn is_scale(&self) -> bool {
        matches!(self, Coordinate::Chol(..) | Coordinate::LraDiag(_) | Coordinate::LraV(..))
    }
}

impl std::fmt::Display for Coordinate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Coordinate::Location(i) => write!(f, "mu[{i}]"),
            Coordinate::Chol(i, j) => write!(f, "L[{i},{j}]"),
            Coordinate::LraDiag(d) => write!(f, "a[{d}]"),
            Coordinate::LraV(d, r) => write!(f, "V[{d},{r}]"),
            Coordinate::Dof => write!(f, "nu"),
        }
    }
}

/// Location, precision and (for the t family) degrees of freedom.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MvParams {
    pub mu: DVector<f64>,
    pub scale: ScaleParam,
    pub nu: Option<f64>,
}

impl MvParams {
    pub fn new(mu: DVector<f64>, scale: ScaleParam, nu: Option<f64>) -> Result<Self> {
        if mu.len() != scale.dim() {
            return Err(Error::shape(format!(
                "location has length {} but scale has dimension {}",
                mu.len(),
                scale.dim()
            )));
        }
        if mu.iter().any(|m| !m.is_finite()) {
            return Err(Error::invalid("non-finite location"));
        }
        if let Some(v) = nu {
            if !(v > 2.0) || v.is_nan() {
                return Err(Error::invalid(format!("degrees of freedom must exceed 2, got {v}")));
            }
        }
        Ok(Self { mu, scale, nu })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    fn nu_for(&self, family: Family) -> Result<f64> {
        match family {
            Family::Normal => Ok(f64::INFINITY),
            Family::StudentT => self
                .nu
                .ok_or_else(|| Error::invalid("student-t parameters need degrees of freedom")),
        }
    }
}

/// Residual of one observation.
#[derive(Debug, Clone, PartialEq)]
pub struct Residual {
    pub r: DVector<f64>,
    /// `A⁻¹ r`, Cholesky parameterization only.
    pub z: Option<DVector<f64>>,
    /// `rᵀ Ω r`.
    pub zz: f64,
}

struct LraCache {
    /// `B = A⁻¹ V`.
    b: DMatrix<f64>,
    /// `M⁻¹` with `M = I + Vᵀ A⁻¹ V`.
    minv: DMatrix<f64>,
    /// `Vᵀ r`.
    vr: DVector<f64>,
}

/// Everything needed to evaluate ℓ and its coordinate derivatives at one observation.
pub struct RowEval<'a> {
    family: Family,
    params: &'a MvParams,
    r: DVector<f64>,
    z: Option<DVector<f64>>,
    omega_r: DVector<f64>,
    q: f64,
    half_logdet: f64,
    nu: f64,
    lra: Option<LraCache>,
}

impl<'a> RowEval<'a> {
    pub fn new(family: Family, params: &'a MvParams, y: &DVector<f64>) -> Result<Self> {
        let d = params.dim();
        if y.len() != d {
            return Err(Error::shape(format!("observation has length {}, expected {d}", y.len())));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite observation"));
        }
        let nu = params.nu_for(family)?;
        let r = y - &params.mu;
        match &params.scale {
            ScaleParam::Cd(c) => {
                let l = c.factor();
                let z = lower_mul(l, &r);
                let omega_r = lower_t_mul(l, &z);
                let q = z.norm_squared();
                Ok(Self {
                    family,
                    params,
                    half_logdet: c.half_logdet(),
                    r,
                    z: Some(z),
                    omega_r,
                    q,
                    nu,
                    lra: None,
                })
            }
            ScaleParam::Lra(p) => {
                let (cache, half_logdet) = lra_cache(p, &r)?;
                let a = p.diag();
                let omega_r = r.component_mul(a) + p.v() * &cache.vr;
                let q = r.dot(&omega_r);
                Ok(Self {
                    family,
                    params,
                    half_logdet,
                    r,
                    z: None,
                    omega_r,
                    q,
                    nu,
                    lra: Some(cache),
                })
            }
        }
    }

    pub fn residual(&self) -> Residual {
        Residual { r: self.r.clone(), z: self.z.clone(), zz: self.q }
    }

    pub fn quadratic_form(&self) -> f64 {
        self.q
    }

    pub fn loglik(&self) -> f64 {
        let d = self.params.dim() as f64;
        match self.family {
            Family::Normal => -0.5 * d * (2.0 * PI).ln() + self.half_logdet - 0.5 * self.q,
            Family::StudentT => {
                let v = self.nu;
                ln_gamma(0.5 * (v + d)) - ln_gamma(0.5 * v) - 0.5 * d * (v * PI).ln()
                    + self.half_logdet
                    - 0.5 * (v + d) * (self.q / v).ln_1p()
            }
        }
    }

    /// `(h′(q), h″(q))` of the quadratic-form term.
    fn h_derivs(&self) -> (f64, f64) {
        match self.family {
            Family::Normal => (-0.5, 0.0),
            Family::StudentT => {
                let d = self.params.dim() as f64;
                let s = self.nu + self.q;
                (-0.5 * (self.nu + d) / s, 0.5 * (self.nu + d) / (s * s))
            }
        }
    }

    fn combine(&self, dl1: f64, dl2: f64, dq1: f64, dq2: f64) -> (f64, f64) {
        let (h1, h2) = self.h_derivs();
        (dl1 + h1 * dq1, dl2 + h2 * dq1 * dq1 + h1 * dq2)
    }

    fn omega_diag(&self, i: usize) -> f64 {
        match &self.params.scale {
            ScaleParam::Cd(c) => {
                let l = c.factor();
                (i..l.nrows()).map(|k| l[(k, i)] * l[(k, i)]).sum()
            }
            ScaleParam::Lra(p) => p.diag()[i] + p.v().row(i).norm_squared(),
        }
    }

    /// `(∂ℓ/∂μ_i, ∂²ℓ/∂μ_i²)`.
    pub fn mu(&self, i: usize) -> (f64, f64) {
        self.combine(0.0, 0.0, -2.0 * self.omega_r[i], 2.0 * self.omega_diag(i))
    }

    /// Derivatives in the factor entry `(i, j)`, `j ≤ i`.
    pub fn chol(&self, i: usize, j: usize) -> Result<(f64, f64)> {
        let c = self.cd()?;
        let z = self.z.as_ref().expect("cholesky row has z");
        let rj = self.r[j];
        let (dl1, dl2) = if i == j {
            let lii = c.get(i, i);
            (1.0 / lii, -1.0 / (lii * lii))
        } else {
            (0.0, 0.0)
        };
        Ok(self.combine(dl1, dl2, 2.0 * z[i] * rj, 2.0 * rj * rj))
    }

    /// Derivatives in the diagonal entry `a_d`.
    pub fn lra_diag(&self, d: usize) -> Result<(f64, f64)> {
        let cache = self.lra_cache()?;
        let p = self.lra_params()?;
        let s = sigma_diag(p, cache, d);
        let rd = self.r[d];
        Ok(self.combine(0.5 * s, -0.5 * s * s, rd * rd, 0.0))
    }

    /// Derivatives in the loading `V[i, j]`.
    pub fn lra_v(&self, i: usize, j: usize) -> Result<(f64, f64)> {
        let cache = self.lra_cache()?;
        let p = self.lra_params()?;
        // Σ V = A⁻¹ V M⁻¹ and Vᵀ Σ V = I − M⁻¹
        let sv_ij: f64 = (0..p.rank()).map(|s| cache.b[(i, s)] * cache.minv[(s, j)]).sum();
        let vsv_jj = 1.0 - cache.minv[(j, j)];
        let s_ii = sigma_diag(p, cache, i);
        let dl1 = sv_ij;
        let dl2 = s_ii - s_ii * vsv_jj - sv_ij * sv_ij;
        let ri = self.r[i];
        Ok(self.combine(dl1, dl2, 2.0 * cache.vr[j] * ri, 2.0 * ri * ri))
    }

    /// Derivatives in the degrees of freedom.
    pub fn nu(&self) -> Result<(f64, f64)> {
        if self.family != Family::StudentT {
            return Err(Error::Unsupported("degrees of freedom of a normal model".into()));
        }
        let v = self.nu;
        let d = self.params.dim() as f64;
        let q = self.q;
        let s = v + q;
        let d1 = 0.5 * digamma(0.5 * (v + d))? - 0.5 * digamma(0.5 * v)? - 0.5 * d / v
            - 0.5 * (q / v).ln_1p()
            + 0.5 * (v + d) * q / (v * s);
        let d2 = 0.25 * trigamma(0.5 * (v + d))? - 0.25 * trigamma(0.5 * v)?
            + 0.5 * d / (v * v)
            + q * (v * q - d * (2.0 * v + q)) / (2.0 * v * v * s * s);
        Ok((d1, d2))
    }

    pub fn coord(&self, c: Coordinate) -> Result<(f64, f64)> {
        match c {
            Coordinate::Location(i) => Ok(self.mu(i)),
            Coordinate::Chol(i, j) => self.chol(i, j),
            Coordinate::LraDiag(d) => self.lra_diag(d),
            Coordinate::LraV(i, j) => self.lra_v(i, j),
            Coordinate::Dof => self.nu(),
        }
    }

    fn cd(&self) -> Result<&CholeskyPrecision> {
        match &self.params.scale {
            ScaleParam::Cd(c) => Ok(c),
            ScaleParam::Lra(_) => Err(Error::Unsupported("cholesky coordinate on a low-rank scale".into())),
        }
    }

    fn lra_params(&self) -> Result<&LowRankPrecision> {
        match &self.params.scale {
            ScaleParam::Lra(p) => Ok(p),
            ScaleParam::Cd(_) => Err(Error::Unsupported("low-rank coordinate on a cholesky scale".into())),
        }
    }

    fn lra_cache(&self) -> Result<&LraCache> {
        self.lra
            .as_ref()
            .ok_or_else(|| Error::Unsupported("low-rank coordinate on a cholesky scale".into()))
    }
}

fn sigma_diag(p: &LowRankPrecision, cache: &LraCache, i: usize) -> f64 {
    let rk = p.rank();
    let mut quad = 0.0;
    for s in 0..rk {
        for t in 0..rk {
            quad += cache.b[(i, s)] * cache.minv[(s, t)] * cache.b[(i, t)];
        }
    }
    1.0 / p.diag()[i] - quad
}

fn lra_cache(p: &LowRankPrecision, r: &DVector<f64>) -> Result<(LraCache, f64)> {
    let a = p.diag();
    let v = p.v();
    let rk = p.rank();
    let mut b = v.clone();
    for (i, mut row) in b.row_iter_mut().enumerate() {
        row /= a[i];
    }
    let mut m = v.transpose() * &b;
    for s in 0..rk {
        m[(s, s)] += 1.0;
    }
    linalg::symmetrize(&mut m);
    // M is I plus a PSD matrix, so this only fails on non-finite input
    let lm = linalg::cholesky(&m).map_err(|e| Error::Singular(format!("low-rank capacitance: {e}")))?;
    let minv = linalg::chol_inverse(&lm);
    let half_logdet = 0.5 * (a.iter().map(|x| x.ln()).sum::<f64>() + linalg::chol_logdet(&lm));
    let vr = v.transpose() * r;
    Ok((LraCache { b, minv, vr }, half_logdet))
}

/// `L x` for lower-triangular `L`.
fn lower_mul(l: &DMatrix<f64>, x: &DVector<f64>) -> DVector<f64> {
    let n = l.nrows();
    DVector::from_fn(n, |i, _| (0..=i).map(|k| l[(i, k)] * x[k]).sum())
}

/// `Lᵀ x` for lower-triangular `L`.
fn lower_t_mul(l: &DMatrix<f64>, x: &DVector<f64>) -> DVector<f64> {
    let n = l.nrows();
    DVector::from_fn(n, |i, _| (i..n).map(|k| l[(k, i)] * x[k]).sum())
}

pub fn residual(params: &MvParams, y: &DVector<f64>) -> Result<Residual> {
    let fam = if params.nu.is_some() { Family::StudentT } else { Family::Normal };
    Ok(RowEval::new(fam, params, y)?.residual())
}

pub fn loglik(family: Family, params: &MvParams, y: &DVector<f64>) -> Result<f64> {
    Ok(RowEval::new(family, params, y)?.loglik())
}

fn collect_vec(
    family: Family,
    params: &MvParams,
    y: &DVector<f64>,
    second: bool,
    f: impl Fn(&RowEval, usize) -> Result<(f64, f64)>,
    n: usize,
) -> Result<DVector<f64>> {
    let ev = RowEval::new(family, params, y)?;
    let mut out = DVector::zeros(n);
    for i in 0..n {
        let (d1, d2) = f(&ev, i)?;
        out[i] = if second { d2 } else { d1 };
    }
    Ok(out)
}

pub fn dmu(family: Family, params: &MvParams, y: &DVector<f64>) -> Result<DVector<f64>> {
    collect_vec(family, params, y, false, |e, i| Ok(e.mu(i)), params.dim())
}

pub fn d2mu(family: Family, params: &MvParams, y: &DVector<f64>) -> Result<DVector<f64>> {
    collect_vec(family, params, y, true, |e, i| Ok(e.mu(i)), params.dim())
}

fn collect_chol(family: Family, params: &MvParams, y: &DVector<f64>, second: bool) -> Result<DMatrix<f64>> {
    let ev = RowEval::new(family, params, y)?;
    let d = params.dim();
    let mut out = DMatrix::zeros(d, d);
    for i in 0..d {
        for j in 0..=i {
            let (d1, d2) = ev.chol(i, j)?;
            out[(i, j)] = if second { d2 } else { d1 };
        }
    }
    Ok(out)
}

/// Lower-triangular matrix of `∂ℓ/∂L_ij`.
pub fn dchol(family: Family, params: &MvParams, y: &DVector<f64>) -> Result<DMatrix<f64>> {
    collect_chol(family, params, y, false)
}

pub fn d2chol(family: Family, params: &MvParams, y: &DVector<f64>) -> Result<DMatrix<f64>> {
    collect_chol(family, params, y, true)
}

pub fn dlra_diag(family: Family, params: &MvParams, y: &DVector<f64>) -> Result<DVector<f64>> {
    collect_vec(family, params, y, false, |e, i| e.lra_diag(i), params.dim())
}

pub fn d2lra_diag(family: Family, params: &MvParams, y: &DVector<f64>) -> Result<DVector<f64>> {
    collect_vec(family, params, y, true, |e, i| e.lra_diag(i), params.dim())
}

fn collect_v(family: Family, params: &MvParams, y: &DVector<f64>, second: bool) -> Result<DMatrix<f64>> {
    let ev = RowEval::new(family, params, y)?;
    let rank = match &params.scale {
        ScaleParam::Lra(p) => p.rank(),
        ScaleParam::Cd(_) => return Err(Error::Unsupported("loadings of a cholesky scale".into())),
    };
    let d = params.dim();
    let mut out = DMatrix::zeros(d, rank);
    for i in 0..d {
        for j in 0..rank {
            let (d1, d2) = ev.lra_v(i, j)?;
            out[(i, j)] = if second { d2 } else { d1 };
        }
    }
    Ok(out)
}

/// D × R matrix of `∂ℓ/∂V_ij`.
pub fn dlra_v(family: Family, params: &MvParams, y: &DVector<f64>) -> Result<DMatrix<f64>> {
    collect_v(family, params, y, false)
}

pub fn d2lra_v(family: Family, params: &MvParams, y: &DVector<f64>) -> Result<DMatrix<f64>> {
    collect_v(family, params, y, true)
}

pub fn dnu(params: &MvParams, y: &DVector<f64>) -> Result<f64> {
    Ok(RowEval::new(Family::StudentT, params, y)?.nu()?.0)
}

pub fn d2nu(params: &MvParams, y: &DVector<f64>) -> Result<f64> {
    Ok(RowEval::new(Family::StudentT, params, y)?.nu()?.1)
}

/// Draws `m` observations as the rows of an m × D matrix.
pub fn sample(family: Family, params: &MvParams, m: usize, seed: u64) -> Result<DMatrix<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_with(family, params, m, &mut rng)
}

pub fn sample_with<R: Rng + ?Sized>(
    family: Family,
    params: &MvParams,
    m: usize,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    let d = params.dim();
    let nu = params.nu_for(family)?;
    // x = μ + T⁻¹ ε with TᵀT = Ω up to orientation; both branches give Cov = Ω⁻¹
    enum Map {
        Factor(DMatrix<f64>),
        Chol(DMatrix<f64>),
    }
    let map = match &params.scale {
        ScaleParam::Cd(c) => Map::Factor(c.factor().clone()),
        ScaleParam::Lra(p) => Map::Chol(linalg::cholesky(&p.precision())?),
    };
    let chi = if family == Family::StudentT {
        Some(ChiSquared::new(nu).map_err(|e| Error::invalid(format!("chi-squared: {e}")))?)
    } else {
        None
    };
    let mut out = DMatrix::zeros(m, d);
    let mut eps = DVector::zeros(d);
    for row in 0..m {
        for e in eps.iter_mut() {
            *e = rng.sample(StandardNormal);
        }
        let x = match &map {
            // L x = ε gives Cov(x) = L⁻¹ L⁻ᵀ = Ω⁻¹
            Map::Factor(l) => linalg::forward_sub(l, &eps),
            // Kᵀ x = ε with K Kᵀ = Ω
            Map::Chol(k) => linalg::backward_sub_t(k, &eps),
        };
        let w = match &chi {
            Some(c) => (nu / c.sample(rng)).sqrt(),
            None => 1.0,
        };
        for j in 0..d {
            out[(row, j)] = params.mu[j] + w * x[j];
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    fn cd(l: DMatrix<f64>) -> ScaleParam {
        ScaleParam::Cd(CholeskyPrecision::new(l).unwrap())
    }

    #[test]
    fn standard_normal_values() {
        let p = MvParams::new(DVector::zeros(1), cd(DMatrix::identity(1, 1)), None).unwrap();
        let v = loglik(Family::Normal, &p, &DVector::zeros(1)).unwrap();
        assert!((v + 0.5 * (2.0 * PI).ln()).abs() < 1e-15);
        let p2 = MvParams::new(DVector::zeros(2), cd(DMatrix::identity(2, 2)), None).unwrap();
        let v2 = loglik(Family::Normal, &p2, &DVector::zeros(2)).unwrap();
        assert!((v2 + (2.0 * PI).ln()).abs() < 1e-15);
    }

    #[test]
    fn location_gradient_is_omega_r() {
        let p = MvParams::new(DVector::zeros(2), cd(dmatrix![1.0, 0.0; 1.0, 1.0]), None).unwrap();
        let g = dmu(Family::Normal, &p, &DVector::from_vec(vec![1.0, 0.0])).unwrap();
        assert!((g - DVector::from_vec(vec![2.0, 1.0])).norm() < 1e-15);
        let h = d2mu(Family::Normal, &p, &DVector::from_vec(vec![1.0, 0.0])).unwrap();
        assert_eq!(h, DVector::from_vec(vec![-2.0, -1.0]));
    }

    #[test]
    fn one_dimensional_cholesky_gradient() {
        let (a, r) = (1.7, 0.4);
        let p = MvParams::new(DVector::zeros(1), cd(dmatrix![a]), None).unwrap();
        let g = dchol(Family::Normal, &p, &DVector::from_vec(vec![r])).unwrap();
        assert!((g[(0, 0)] - (1.0 / a - a * r * r)).abs() < 1e-15);
    }

    #[test]
    fn loadings_vanish_at_zero() {
        let lra = LowRankPrecision::new(DVector::from_vec(vec![1.0, 2.0, 0.5]), DMatrix::zeros(3, 2)).unwrap();
        let p = MvParams::new(DVector::zeros(3), ScaleParam::Lra(lra), None).unwrap();
        let g = dlra_v(Family::Normal, &p, &DVector::zeros(3)).unwrap();
        assert_eq!(g, DMatrix::zeros(3, 2));
    }

    #[test]
    fn dof_score_at_center() {
        let v = 5.0;
        let p = MvParams::new(DVector::zeros(1), cd(DMatrix::identity(1, 1)), Some(v)).unwrap();
        let got = dnu(&p, &DVector::zeros(1)).unwrap();
        let want = -(-v * digamma((1.0 + v) / 2.0).unwrap() + 1.0 + v * digamma(v / 2.0).unwrap()) / (2.0 * v);
        assert!((got - want).abs() < 1e-14);
    }

    #[test]
    fn rejects_bad_params() {
        assert!(MvParams::new(DVector::zeros(2), cd(DMatrix::identity(2, 2)), Some(2.0)).is_err());
        assert!(MvParams::new(DVector::zeros(3), cd(DMatrix::identity(2, 2)), None).is_err());
        let p = MvParams::new(DVector::zeros(2), cd(DMatrix::identity(2, 2)), None).unwrap();
        assert!(loglik(Family::StudentT, &p, &DVector::zeros(2)).is_err());
        assert!(loglik(Family::Normal, &p, &DVector::from_vec(vec![f64::NAN, 0.0])).is_err());
    }
}
