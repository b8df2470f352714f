//! Online coordinate descent LASSO on exponentially discounted Gramians.
//!
//! All solvers work on `G = Xᵀ W Γ X` and `H = Xᵀ W Γ z` only, so the cost of
//! absorbing a new row is O(J²) regardless of how many rows have been seen.
//! The objective is `½ βᵀ G β − Hᵀ β + λ Σ_{j penalized} |β_j|`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Default number of λ values on the path.
pub const DEFAULT_GRID_LEN: usize = 50;
/// Default ratio `λ_min / λ_max`.
pub const DEFAULT_EPS: f64 = 1e-4;
pub const DEFAULT_TOL: f64 = 1e-6;
pub const DEFAULT_MAX_ITER: usize = 1000;

/// Discounted cross products of one coordinate's regression problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GramianState {
    g: DMatrix<f64>,
    h: DVector<f64>,
    gamma: f64,
    /// Discounted `Σ w z²`, kept so the weighted residual sum of squares is available.
    zz: f64,
    /// Discounted `Σ w`.
    wsum: f64,
    /// Discounted row count `Σ (1−γ)^i`.
    n_eff: f64,
    n_rows: u64,
}

impl GramianState {
    pub fn new(dim: usize, gamma: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::invalid(format!("forget factor must lie in [0, 1), got {gamma}")));
        }
        Ok(Self {
            g: DMatrix::zeros(dim, dim),
            h: DVector::zeros(dim),
            gamma,
            zz: 0.0,
            wsum: 0.0,
            n_eff: 0.0,
            n_rows: 0,
        })
    }

    /// Builds a state directly from accumulated matrices.
    pub fn from_parts(g: DMatrix<f64>, h: DVector<f64>, gamma: f64) -> Result<Self> {
        if g.nrows() != g.ncols() || g.nrows() != h.len() {
            return Err(Error::shape(format!("G is {}x{}, H has {}", g.nrows(), g.ncols(), h.len())));
        }
        let mut s = Self::new(h.len(), gamma)?;
        s.g = g;
        s.h = h;
        Ok(s)
    }

    pub fn dim(&self) -> usize {
        self.h.len()
    }

    pub fn g(&self) -> &DMatrix<f64> {
        &self.g
    }

    pub fn h(&self) -> &DVector<f64> {
        &self.h
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn n_eff(&self) -> f64 {
        self.n_eff
    }

    pub fn n_rows(&self) -> u64 {
        self.n_rows
    }

    pub fn weight_sum(&self) -> f64 {
        self.wsum
    }

    /// Weighted residual sum of squares `Σ w (z − xβ)²` of a coefficient vector.
    pub fn rss(&self, beta: &DVector<f64>) -> f64 {
        (self.zz - 2.0 * self.h.dot(beta) + beta.dot(&(&self.g * beta))).max(0.0)
    }

    /// `G ← (1−γ)G + w x xᵀ`, `H ← (1−γ)H + w x z`.
    pub fn update(&mut self, x: &[f64], z: f64, w: f64) -> Result<()> {
        let j = self.dim();
        if x.len() != j {
            return Err(Error::shape(format!("row has {} features, expected {j}", x.len())));
        }
        if !(w >= 0.0) || !w.is_finite() || !z.is_finite() || x.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite or negative row contribution (w={w}, z={z})")));
        }
        let keep = 1.0 - self.gamma;
        if keep != 1.0 {
            self.g *= keep;
            self.h *= keep;
            self.zz *= keep;
            self.wsum *= keep;
            self.n_eff *= keep;
        }
        for a in 0..j {
            let wa = w * x[a];
            if wa != 0.0 {
                for b in a..j {
                    self.g[(a, b)] += wa * x[b];
                }
            }
            self.h[a] += wa * z;
        }
        for a in 0..j {
            for b in 0..a {
                self.g[(a, b)] = self.g[(b, a)];
            }
        }
        self.zz += w * z * z;
        self.wsum += w;
        self.n_eff += 1.0;
        self.n_rows += 1;
        Ok(())
    }

    /// The same problem in rescaled features `x̃_j = s_j x_j`.
    pub fn scaled(&self, s: &DVector<f64>) -> GramianState {
        let mut out = self.clone();
        for a in 0..self.dim() {
            out.h[a] *= s[a];
            for b in 0..self.dim() {
                out.g[(a, b)] *= s[a] * s[b];
            }
        }
        out
    }
}

/// Functional form of [`GramianState::update`].
pub fn gram_update(state: &GramianState, x: &[f64], z: f64, w: f64) -> Result<GramianState> {
    let mut s = state.clone();
    s.update(x, z, w)?;
    Ok(s)
}

/// `sign(x) · max(|x| − λ, 0)`.
pub fn soft_threshold(x: f64, lam: f64) -> f64 {
    if x > lam {
        x - lam
    } else if x < -lam {
        x + lam
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaGrid {
    pub values: Vec<f64>,
    /// No penalized coordinate carries any signal; descent can be skipped.
    pub degenerate: bool,
}

/// Smallest λ at which every penalized coefficient is zero.
///
/// With unpenalized coordinates `U` this is `max |H_j − G[j,U] β_U|` where
/// `β_U` solves the unpenalized sub-problem; without them it is `max |H_j|`.
pub fn lambda_max(state: &GramianState, unpenalized: &[usize]) -> f64 {
    let j = state.dim();
    let pen: Vec<usize> = (0..j).filter(|k| !unpenalized.contains(k)).collect();
    let resid = if unpenalized.is_empty() {
        state.h.clone()
    } else {
        let u = unpenalized.len();
        let guu = DMatrix::from_fn(u, u, |a, b| state.g[(unpenalized[a], unpenalized[b])]);
        let hu = DVector::from_fn(u, |a, _| state.h[unpenalized[a]]);
        match linalg::cholesky(&guu) {
            Ok(l) => {
                let bu = linalg::chol_solve(&l, &hu);
                let mut r = state.h.clone();
                for &k in &pen {
                    r[k] -= (0..u).map(|a| state.g[(k, unpenalized[a])] * bu[a]).sum::<f64>();
                }
                r
            }
            Err(_) => state.h.clone(),
        }
    };
    pen.iter().map(|&k| resid[k].abs()).fold(0.0, f64::max)
}

/// Log-equispaced decreasing grid from `λ_max` to `eps · λ_max`.
pub fn lambda_grid(state: &GramianState, len: usize, eps: f64, unpenalized: &[usize]) -> Result<LambdaGrid> {
    if len < 2 {
        return Err(Error::invalid(format!("grid needs at least 2 points, got {len}")));
    }
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::invalid(format!("grid ratio must lie in (0, 1), got {eps}")));
    }
    let lmax = lambda_max(state, unpenalized);
    if !(lmax > 0.0) || !lmax.is_finite() {
        return Ok(LambdaGrid { values: vec![0.0; len], degenerate: true });
    }
    let step = eps.ln() / (len - 1) as f64;
    let values = (0..len).map(|i| lmax * (step * i as f64).exp()).collect();
    Ok(LambdaGrid { values, degenerate: false })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CdResult {
    pub beta: DVector<f64>,
    pub converged: bool,
    pub sweeps: usize,
}

fn coordinate_step(g: &DMatrix<f64>, h: &DVector<f64>, beta: &mut DVector<f64>, k: usize, lam: f64) -> f64 {
    let gkk = g[(k, k)];
    let old = beta[k];
    if !(gkk > 0.0) {
        beta[k] = 0.0;
        return old.abs();
    }
    let partial = h[k] - g.row(k).transpose().dot(beta) + gkk * old;
    let new = soft_threshold(partial, lam) / gkk;
    beta[k] = new;
    (new - old).abs()
}

/// Cyclic coordinate descent at one λ, starting from `start`.
///
/// After each full sweep the active (nonzero) coordinates are cycled until
/// they settle; a full sweep then confirms the active set.
pub fn cd_solve(
    state: &GramianState,
    start: &DVector<f64>,
    lam: f64,
    unpenalized: &[usize],
    max_iter: usize,
    tol: f64,
) -> Result<CdResult> {
    let j = state.dim();
    if start.len() != j {
        return Err(Error::shape(format!("start has {} entries, expected {j}", start.len())));
    }
    if !(lam >= 0.0) || !(tol > 0.0) {
        return Err(Error::invalid(format!("need λ ≥ 0 and tol > 0 (λ={lam}, tol={tol})")));
    }
    let g = &state.g;
    let h = &state.h;
    let pen: Vec<f64> = (0..j).map(|k| if unpenalized.contains(&k) { 0.0 } else { lam }).collect();
    let mut beta = start.clone();
    let mut sweeps = 0;
    while sweeps < max_iter {
        let mut delta = 0.0f64;
        for k in 0..j {
            delta = delta.max(coordinate_step(g, h, &mut beta, k, pen[k]));
        }
        sweeps += 1;
        if delta < tol {
            return Ok(CdResult { beta, converged: true, sweeps });
        }
        let active: Vec<usize> = (0..j).filter(|&k| beta[k] != 0.0).collect();
        while sweeps < max_iter {
            let mut d = 0.0f64;
            for &k in &active {
                d = d.max(coordinate_step(g, h, &mut beta, k, pen[k]));
            }
            sweeps += 1;
            if d < tol {
                break;
            }
        }
    }
    Ok(CdResult { beta, converged: false, sweeps })
}

/// Coefficients along a λ grid with warm starts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LassoPath {
    pub lambdas: Vec<f64>,
    /// L × J, one row per λ.
    pub coefs: DMatrix<f64>,
    pub converged: Vec<bool>,
}

impl LassoPath {
    pub fn len(&self) -> usize {
        self.lambdas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambdas.is_empty()
    }

    pub fn beta(&self, i: usize) -> DVector<f64> {
        self.coefs.row(i).transpose()
    }

    pub fn nonzero(&self, i: usize) -> usize {
        self.coefs.row(i).iter().filter(|v| **v != 0.0).count()
    }
}

pub fn path_solve(
    state: &GramianState,
    grid: &[f64],
    unpenalized: &[usize],
    max_iter: usize,
    tol: f64,
) -> Result<LassoPath> {
    path_solve_from(state, grid, &DVector::zeros(state.dim()), unpenalized, max_iter, tol)
}

/// [`path_solve`] with an explicit warm start for the first λ.
pub fn path_solve_from(
    state: &GramianState,
    grid: &[f64],
    start: &DVector<f64>,
    unpenalized: &[usize],
    max_iter: usize,
    tol: f64,
) -> Result<LassoPath> {
    let j = state.dim();
    let mut coefs = DMatrix::zeros(grid.len(), j);
    let mut converged = Vec::with_capacity(grid.len());
    let mut beta = start.clone();
    for (i, &lam) in grid.iter().enumerate() {
        let res = cd_solve(state, &beta, lam, unpenalized, max_iter, tol)?;
        beta = res.beta;
        coefs.set_row(i, &beta.transpose());
        converged.push(res.converged);
    }
    Ok(LassoPath { lambdas: grid.to_vec(), coefs, converged })
}

/// Unregularized solution of `G β = H` by Cholesky.
pub fn rls_solve(state: &GramianState) -> Result<DVector<f64>> {
    let l = linalg::cholesky(&state.g).map_err(|e| {
        let d = state.g.diagonal();
        let (lo, hi) = d.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
        Error::Singular(format!("gramian not invertible ({e}); diagonal range [{lo:e}, {hi:e}]"))
    })?;
    Ok(linalg::chol_solve(&l, &state.h))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    #[test]
    fn outer_product_update() {
        let mut s = GramianState::new(2, 0.0).unwrap();
        s.update(&[1.0, 2.0], 3.0, 1.0).unwrap();
        assert_eq!(s.g(), &dmatrix![1.0, 2.0; 2.0, 4.0]);
        assert_eq!(s.h(), &DVector::from_vec(vec![3.0, 6.0]));
    }

    #[test]
    fn forgetting_halves_old_rows() {
        let mut s = GramianState::new(2, 0.5).unwrap();
        s.update(&[1.0, 2.0], 1.0, 1.0).unwrap();
        s.update(&[1.0, 2.0], 1.0, 1.0).unwrap();
        assert_eq!(s.g(), &(dmatrix![1.0, 2.0; 2.0, 4.0] * 1.5));
        assert_eq!(s.n_eff(), 1.5);
    }

    #[test]
    fn rejects_bad_rows() {
        let mut s = GramianState::new(2, 0.0).unwrap();
        assert!(s.update(&[1.0, f64::NAN], 1.0, 1.0).is_err());
        assert!(s.update(&[1.0, 1.0], 1.0, -1.0).is_err());
        assert!(s.update(&[1.0], 1.0, 1.0).is_err());
        assert!(GramianState::new(2, 1.0).is_err());
    }

    #[test]
    fn soft_threshold_cases() {
        assert_eq!(soft_threshold(3.0, 1.0), 2.0);
        assert_eq!(soft_threshold(-3.0, 1.0), -2.0);
        assert_eq!(soft_threshold(0.5, 1.0), 0.0);
    }

    #[test]
    fn grid_spacing() {
        let s = GramianState::from_parts(DMatrix::identity(3, 3), DVector::from_vec(vec![0.0, 4.0, -2.0]), 0.0)
            .unwrap();
        let g = lambda_grid(&s, 3, 1e-3, &[]).unwrap();
        assert!(!g.degenerate);
        assert_eq!(g.values[0], 4.0);
        assert!((g.values[1] - 4.0 * 1e-3f64.sqrt()).abs() < 1e-14);
        assert!((g.values[2] - 0.004).abs() < 1e-15);
        let z = GramianState::from_parts(DMatrix::identity(3, 3), DVector::zeros(3), 0.0).unwrap();
        assert!(lambda_grid(&z, 3, 1e-3, &[]).unwrap().degenerate);
    }

    #[test]
    fn orthonormal_design_is_closed_form() {
        let h = DVector::from_vec(vec![3.0, -0.5, -2.0, 1.2]);
        let s = GramianState::from_parts(DMatrix::identity(4, 4), h.clone(), 0.0).unwrap();
        let r = cd_solve(&s, &DVector::zeros(4), 1.0, &[], 100, 1e-12).unwrap();
        assert!(r.converged);
        for k in 0..4 {
            assert_eq!(r.beta[k], soft_threshold(h[k], 1.0));
        }
    }

    #[test]
    fn rls_identity() {
        let h = DVector::from_vec(vec![1.0, -2.0]);
        let s = GramianState::from_parts(DMatrix::identity(2, 2), h.clone(), 0.0).unwrap();
        assert_eq!(rls_solve(&s).unwrap(), h);
        let bad = GramianState::from_parts(dmatrix![1.0, 1.0; 1.0, 1.0], h, 0.0).unwrap();
        assert!(matches!(rls_solve(&bad), Err(Error::Singular(_))));
    }
}
