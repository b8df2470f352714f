//! Gaussian copula over univariate Student-t marginals, with a recursive
//! second-moment tracker that also serves the residual covariance of the
//! linear baselines.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::special::{norm_cdf, norm_quantile, StudentT};

/// Added to the diagonal before rescaling to unit diagonal.
pub const DIAG_FLOOR: f64 = 1e-6;
/// PIT values are kept inside `[PIT_CLAMP, 1 − PIT_CLAMP]`.
pub const PIT_CLAMP: f64 = 1e-12;

/// Running mean of outer products, `S ← ((k−1)/k) S + n nᵀ / k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SecondMoment {
    s: DMatrix<f64>,
    count: u64,
}

impl SecondMoment {
    pub fn new(dim: usize) -> Self {
        Self { s: DMatrix::zeros(dim, dim), count: 0 }
    }

    pub fn from_rows(rows: &[DVector<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, |r| r.len());
        let mut m = Self::new(dim);
        for r in rows {
            m.update(r)?;
        }
        Ok(m)
    }

    pub fn dim(&self) -> usize {
        self.s.nrows()
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn moment(&self) -> &DMatrix<f64> {
        &self.s
    }

    pub fn update(&mut self, n: &DVector<f64>) -> Result<()> {
        if n.len() != self.dim() {
            return Err(Error::shape(format!("vector of length {} for a {}-dimensional tracker", n.len(), self.dim())));
        }
        if n.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite vector"));
        }
        let k = (self.count + 1) as f64;
        let keep = (k - 1.0) / k;
        let d = self.dim();
        for j in 0..d {
            for i in 0..d {
                self.s[(i, j)] = keep * self.s[(i, j)] + n[i] * n[j] / k;
            }
        }
        self.count += 1;
        Ok(())
    }
}

/// Unit-diagonal correlation from a second moment, with [`DIAG_FLOOR`] added first.
pub fn correlation_of(s: &DMatrix<f64>) -> DMatrix<f64> {
    let d = s.nrows();
    let sd: Vec<f64> = (0..d).map(|i| (s[(i, i)] + DIAG_FLOOR).sqrt()).collect();
    DMatrix::from_fn(d, d, |i, j| if i == j { 1.0 } else { s[(i, j)] / (sd[i] * sd[j]) })
}

/// Probability integral transform under a t marginal, clamped away from 0 and 1.
pub fn pit(marginal: &StudentT, y: f64) -> Result<f64> {
    if !(marginal.scale > 0.0) || !(marginal.df > 0.0) || !y.is_finite() {
        return Err(Error::invalid(format!("pit needs scale > 0, df > 0 and finite y (got {marginal:?}, y={y})")));
    }
    Ok(marginal.cdf(y).clamp(PIT_CLAMP, 1.0 - PIT_CLAMP))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CopulaState {
    moment: SecondMoment,
    corr: DMatrix<f64>,
}

impl CopulaState {
    pub fn new(dim: usize) -> Self {
        Self { moment: SecondMoment::new(dim), corr: DMatrix::identity(dim, dim) }
    }

    /// Batch start from in-sample PIT values; the count becomes the window length.
    pub fn from_pits(u: &[DVector<f64>]) -> Result<Self> {
        let dim = u.first().map_or(0, |r| r.len());
        let mut s = Self::new(dim);
        for row in u {
            let n = normal_scores(row)?;
            s.moment.update(&n)?;
        }
        s.corr = correlation_of(s.moment.moment());
        Ok(s)
    }

    /// State whose copula correlation is `corr` (unit diagonal, positive definite).
    pub fn with_correlation(corr: DMatrix<f64>) -> Result<Self> {
        let d = corr.nrows();
        if corr.ncols() != d || (0..d).any(|i| (corr[(i, i)] - 1.0).abs() > 1e-12) {
            return Err(Error::invalid("correlation must be square with unit diagonal"));
        }
        linalg::cholesky(&corr)?;
        Ok(Self { moment: SecondMoment { s: corr.clone(), count: 1 }, corr })
    }

    pub fn dim(&self) -> usize {
        self.moment.dim()
    }

    pub fn count(&self) -> u64 {
        self.moment.count()
    }

    pub fn moment(&self) -> &DMatrix<f64> {
        self.moment.moment()
    }

    /// Copula correlation `Σ̃`; diagonal exactly one.
    pub fn correlation(&self) -> &DMatrix<f64> {
        &self.corr
    }

    pub fn update(&mut self, u: &DVector<f64>) -> Result<()> {
        let n = normal_scores(u)?;
        self.moment.update(&n)?;
        self.corr = correlation_of(self.moment.moment());
        Ok(())
    }

    /// Cholesky factor of `Σ̃`, shrunk toward the identity if needed.
    fn factor(&self) -> Result<DMatrix<f64>> {
        if let Ok(l) = linalg::cholesky(&self.corr) {
            return Ok(l);
        }
        let d = self.dim();
        for s in [0.1, 0.5, 1.0] {
            let m = &self.corr * (1.0 - s) + DMatrix::identity(d, d) * s;
            if let Ok(l) = linalg::cholesky(&m) {
                return Ok(l);
            }
        }
        Err(Error::NotPositiveDefinite("copula correlation".into()))
    }
}

fn normal_scores(u: &DVector<f64>) -> Result<DVector<f64>> {
    if let Some(bad) = u.iter().find(|v| !(**v > 0.0 && **v < 1.0)) {
        return Err(Error::invalid(format!("uniform value {bad} outside (0, 1)")));
    }
    Ok(u.map(norm_quantile))
}

fn check_marginals(state: &CopulaState, marginals: &[StudentT]) -> Result<()> {
    if marginals.len() != state.dim() {
        return Err(Error::shape(format!("{} marginals for a {}-dimensional copula", marginals.len(), state.dim())));
    }
    Ok(())
}

/// Joint log density: Gaussian copula term plus marginal log densities.
pub fn copula_loglik(state: &CopulaState, marginals: &[StudentT], y: &DVector<f64>) -> Result<f64> {
    check_marginals(state, marginals)?;
    if y.len() != state.dim() {
        return Err(Error::shape(format!("observation of length {} for dimension {}", y.len(), state.dim())));
    }
    let mut n = DVector::zeros(y.len());
    let mut marg = 0.0;
    for (d, m) in marginals.iter().enumerate() {
        n[d] = norm_quantile(pit(m, y[d])?);
        marg += m.ln_pdf(y[d]);
    }
    let l = state.factor()?;
    let a = linalg::forward_sub(&l, &n);
    let quad = a.norm_squared() - n.norm_squared();
    Ok(-0.5 * linalg::chol_logdet(&l) - 0.5 * quad + marg)
}

/// `m` joint draws: correlated normals mapped through Φ and the marginal quantiles.
pub fn copula_sample(state: &CopulaState, marginals: &[StudentT], m: usize, seed: u64) -> Result<DMatrix<f64>> {
    check_marginals(state, marginals)?;
    let l = state.factor()?;
    let d = state.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = DMatrix::zeros(m, d);
    for i in 0..m {
        let e = DVector::from_fn(d, |_, _| StandardNormal.sample(&mut rng));
        let z = &l * e;
        for (k, marg) in marginals.iter().enumerate() {
            let u = norm_cdf(z[k]).clamp(PIT_CLAMP, 1.0 - PIT_CLAMP);
            out[(i, k)] = marg.quantile(u);
        }
    }
    Ok(out)
}
