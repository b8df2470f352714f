//! Precision-matrix parameterizations: a lower-triangular Cholesky-type factor
//! `Ω = Lᵀ L`, and diagonal plus low rank `Ω = diag(a) + V Vᵀ`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Default rank of the low-rank parameterization.
pub const DEFAULT_RANK: usize = 2;

/// Precision `Ω = Lᵀ L` with `L` lower triangular and a positive diagonal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CholeskyPrecision {
    factor: DMatrix<f64>,
}

impl CholeskyPrecision {
    pub fn new(factor: DMatrix<f64>) -> Result<Self> {
        let d = factor.nrows();
        if d == 0 || factor.ncols() != d {
            return Err(Error::shape(format!(
                "cholesky factor must be square and non-empty, got {}x{}",
                d,
                factor.ncols()
            )));
        }
        for i in 0..d {
            if !(factor[(i, i)] > 0.0) || !factor[(i, i)].is_finite() {
                return Err(Error::invalid(format!(
                    "cholesky diagonal {i} must be positive, got {}",
                    factor[(i, i)]
                )));
            }
            for j in 0..d {
                if !factor[(i, j)].is_finite() {
                    return Err(Error::invalid(format!("non-finite factor entry ({i},{j})")));
                }
                if j > i && factor[(i, j)] != 0.0 {
                    return Err(Error::invalid(format!("factor entry ({i},{j}) above the diagonal")));
                }
            }
        }
        Ok(Self { factor })
    }

    pub fn identity(dim: usize) -> Self {
        Self { factor: DMatrix::identity(dim, dim) }
    }

    pub fn dim(&self) -> usize {
        self.factor.nrows()
    }

    /// The lower-triangular factor `L = A⁻¹`.
    pub fn factor(&self) -> &DMatrix<f64> {
        &self.factor
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.factor[(i, j)]
    }

    /// `½ log|Ω|`, the sum of the log diagonal.
    pub fn half_logdet(&self) -> f64 {
        self.factor.diagonal().iter().map(|v| v.ln()).sum()
    }

    pub fn precision(&self) -> DMatrix<f64> {
        let mut omega = self.factor.transpose() * &self.factor;
        linalg::symmetrize(&mut omega);
        omega
    }

    /// Covariance factor `A = L⁻¹`, so that `Σ = A Aᵀ`.
    pub fn covariance_factor(&self) -> DMatrix<f64> {
        // a positive diagonal is guaranteed by construction
        linalg::lower_triangular_inverse(&self.factor).expect("validated factor")
    }
}

/// Precision `Ω = diag(a) + V Vᵀ` with `a > 0` and `V` of shape D × R.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LowRankPrecision {
    diag: DVector<f64>,
    v: DMatrix<f64>,
}

impl LowRankPrecision {
    pub fn new(diag: DVector<f64>, v: DMatrix<f64>) -> Result<Self> {
        if diag.is_empty() || v.nrows() != diag.len() {
            return Err(Error::shape(format!(
                "low-rank factor has {} rows for dimension {}",
                v.nrows(),
                diag.len()
            )));
        }
        if let Some(d) = diag.iter().position(|a| !(*a > 0.0) || !a.is_finite()) {
            return Err(Error::invalid(format!("diagonal a_{d} must be positive, got {}", diag[d])));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("non-finite loading"));
        }
        Ok(Self { diag, v })
    }

    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    pub fn rank(&self) -> usize {
        self.v.ncols()
    }

    pub fn diag(&self) -> &DVector<f64> {
        &self.diag
    }

    pub fn v(&self) -> &DMatrix<f64> {
        &self.v
    }

    pub fn precision(&self) -> DMatrix<f64> {
        let mut omega = &self.v * self.v.transpose();
        for d in 0..self.dim() {
            omega[(d, d)] += self.diag[d];
        }
        linalg::symmetrize(&mut omega);
        omega
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScaleKind {
    Cd,
    Lra,
}

impl std::fmt::Display for ScaleKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ScaleKind::Cd => "CD",
            ScaleKind::Lra => "LRA",
        })
    }
}

/// Either parameterization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ScaleParam {
    Cd(CholeskyPrecision),
    Lra(LowRankPrecision),
}

impl ScaleParam {
    pub fn dim(&self) -> usize {
        match self {
            ScaleParam::Cd(c) => c.dim(),
            ScaleParam::Lra(l) => l.dim(),
        }
    }

    pub fn kind(&self) -> ScaleKind {
        match self {
            ScaleParam::Cd(_) => ScaleKind::Cd,
            ScaleParam::Lra(_) => ScaleKind::Lra,
        }
    }

    pub fn precision(&self) -> DMatrix<f64> {
        match self {
            ScaleParam::Cd(c) => c.precision(),
            ScaleParam::Lra(l) => l.precision(),
        }
    }
}

/// Ω from the Cholesky parameterization.
pub fn precision_from_cd(p: &CholeskyPrecision) -> DMatrix<f64> {
    p.precision()
}

/// Ω from the low-rank parameterization.
pub fn precision_from_lra(p: &LowRankPrecision) -> DMatrix<f64> {
    p.precision()
}

/// `Σ = Ω⁻¹` through a Cholesky solve.
pub fn covariance_from_precision(omega: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let l = linalg::cholesky(omega).map_err(|e| Error::Singular(format!("precision: {e}")))?;
    Ok(linalg::chol_inverse(&l))
}

/// Lower-triangle coordinates in sweep order: row by row, each row starting at
/// the diagonal and walking away from it, so every band is a per-row prefix.
pub fn cd_coordinates(dim: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(dim * (dim + 1) / 2);
    for i in 0..dim {
        for j in (0..=i).rev() {
            out.push((i, j));
        }
    }
    out
}

/// Active coordinates of the scale for a regularization level α.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegularizationMask {
    pub alpha: usize,
    pub kind: ScaleKind,
    pub dim: usize,
    pub rank: usize,
    /// CD: active `(i, j)` with `j ≤ i`. LRA: active loadings `(d, r)`.
    pub active: Vec<(usize, usize)>,
}

impl RegularizationMask {
    /// Whether a CD factor entry or an LRA loading `(d, r)` is free.
    pub fn is_active(&self, i: usize, j: usize) -> bool {
        match self.kind {
            ScaleKind::Cd => j <= i && i < self.dim && i - j <= self.alpha,
            ScaleKind::Lra => i < self.dim && j < self.alpha.min(self.rank),
        }
    }

    /// Largest meaningful α for this shape.
    pub fn saturation(&self) -> usize {
        match self.kind {
            ScaleKind::Cd => self.dim.saturating_sub(1),
            ScaleKind::Lra => self.rank,
        }
    }

    /// Number of free scale coordinates (the LRA diagonal included).
    pub fn n_free(&self) -> usize {
        match self.kind {
            ScaleKind::Cd => self.active.len(),
            ScaleKind::Lra => self.dim + self.active.len(),
        }
    }
}

pub fn mask_for(kind: ScaleKind, dim: usize, rank: usize, alpha: usize) -> RegularizationMask {
    let active = match kind {
        ScaleKind::Cd => cd_coordinates(dim)
            .into_iter()
            .filter(|&(i, j)| i - j <= alpha)
            .collect(),
        ScaleKind::Lra => {
            let cols = alpha.min(rank);
            (0..dim).flat_map(|d| (0..cols).map(move |r| (d, r))).collect()
        }
    };
    RegularizationMask { alpha, kind, dim, rank, active }
}
