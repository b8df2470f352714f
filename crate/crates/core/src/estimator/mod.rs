//! IRLS engine for online multivariate distributional regression.
//!
//! Every scalar coordinate of the distribution parameters (each location entry,
//! each free scale entry, the degrees of freedom) gets its own linear predictor
//! `η = X β`, link function and discounted Gramian. Fitting cycles through the
//! parameter groups (location, scale, degrees of freedom) and, within a group,
//! sweeps the coordinates, each time refitting a weighted LASSO path (or least
//! squares) on the working response and picking λ by an information criterion.
//!
//! The batch fit and the online update share one engine: the batch fit starts
//! from empty Gramians and streams all rows through them, the online update
//! starts from the stored Gramians and streams the single new row.

mod engine;
mod ic;
mod path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::distributions::{Coordinate, Family, MvParams};
use crate::error::{Error, Result};
use crate::exec::ExecMode;
use crate::links::LinkKind;
use crate::online_lasso::{self, GramianState};
use crate::scale_param::{self, CholeskyPrecision, LowRankPrecision, RegularizationMask, ScaleKind, ScaleParam};

pub use engine::{dampened_init, score_weight_working, UpdateReport};
pub use ic::{select_lambda, IcMode, InformationCriterion};
pub use path::{path_fit, AlphaDiagnostics, PathFit};

/// Version tag written into every serialized model.
pub const SNAPSHOT_VERSION: u32 = 1;
/// Lower bound on IRLS weights.
pub const WEIGHT_FLOOR: f64 = 1e-8;
/// Degrees of freedom used while location and scale are fitted the first time.
pub const NU_PILOT: f64 = 1e6;
/// Degrees of freedom the first ν cycle starts from.
pub const NU_START: f64 = 10.0;
/// Default cap on the number of off-diagonals of the Cholesky factor.
pub const DEFAULT_CD_ALPHA_MAX: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    Lasso,
    /// Unregularized recursive least squares.
    Ols,
}

/// Link per coordinate kind.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkSet {
    pub location: LinkKind,
    pub chol_diag: LinkKind,
    pub chol_off: LinkKind,
    pub lra_diag: LinkKind,
    pub lra_v: LinkKind,
    pub dof: LinkKind,
}

impl Default for LinkSet {
    fn default() -> Self {
        Self {
            location: LinkKind::Identity,
            chol_diag: LinkKind::InverseSoftPlus,
            chol_off: LinkKind::Identity,
            lra_diag: LinkKind::Sqrt,
            lra_v: LinkKind::Identity,
            dof: LinkKind::LogShiftTwo,
        }
    }
}

impl LinkSet {
    pub fn for_coordinate(&self, c: Coordinate) -> LinkKind {
        match c {
            Coordinate::Location(_) => self.location,
            Coordinate::Chol(i, j) if i == j => self.chol_diag,
            Coordinate::Chol(..) => self.chol_off,
            Coordinate::LraDiag(_) => self.lra_diag,
            Coordinate::LraV(..) => self.lra_v,
            Coordinate::Dof => self.dof,
        }
    }
}

/// Hyperparameters of one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub family: Family,
    pub scale: ScaleKind,
    pub dim: usize,
    /// Rank of `V` (LRA only).
    pub rank: usize,
    /// Forget factor γ of the Gramians.
    pub forget: f64,
    pub method: Method,
    pub criterion: InformationCriterion,
    /// `None` picks first-order for CD and exact for LRA.
    pub ic_mode: Option<IcMode>,
    pub links: LinkSet,
    pub grid_len: usize,
    pub grid_eps: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    pub tol_outer: f64,
    pub tol_inner: f64,
    pub cd_tol: f64,
    pub cd_max_iter: usize,
    /// Blend the first-iteration scale fits with their start values.
    pub damping: bool,
    /// Scale LASSO features by their weighted standard deviation.
    pub standardize: bool,
    pub exec: ExecMode,
}

impl ModelConfig {
    pub fn new(family: Family, scale: ScaleKind, dim: usize) -> Self {
        Self {
            family,
            scale,
            dim,
            rank: scale_param::DEFAULT_RANK,
            forget: 0.0,
            method: Method::Lasso,
            criterion: InformationCriterion::AIC,
            ic_mode: None,
            links: LinkSet::default(),
            grid_len: online_lasso::DEFAULT_GRID_LEN,
            grid_eps: online_lasso::DEFAULT_EPS,
            max_outer: 10,
            max_inner: 30,
            tol_outer: 1e-3,
            tol_inner: 1e-4,
            cd_tol: online_lasso::DEFAULT_TOL,
            cd_max_iter: online_lasso::DEFAULT_MAX_ITER,
            damping: true,
            standardize: true,
            exec: ExecMode::default(),
        }
    }

    pub fn ic_mode(&self) -> IcMode {
        self.ic_mode.unwrap_or(match self.scale {
            ScaleKind::Cd => IcMode::SecondOrder,
            ScaleKind::Lra => IcMode::Exact,
        })
    }

    /// Largest meaningful regularization level.
    pub fn alpha_cap(&self) -> usize {
        match self.scale {
            ScaleKind::Cd => self.dim.saturating_sub(1),
            ScaleKind::Lra => self.rank,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::invalid("dimension must be positive"));
        }
        if self.scale == ScaleKind::Lra && self.rank == 0 {
            return Err(Error::invalid("low-rank scale needs rank ≥ 1"));
        }
        if !(0.0..1.0).contains(&self.forget) {
            return Err(Error::invalid(format!("forget factor {} outside [0, 1)", self.forget)));
        }
        if self.grid_len < 2 || self.max_outer == 0 || self.max_inner == 0 {
            return Err(Error::invalid("grid length ≥ 2 and iteration caps ≥ 1 required"));
        }
        Ok(())
    }
}

/// Binding of one coordinate to its link, design and estimation method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordinateSpec {
    pub coord: Coordinate,
    pub link: LinkKind,
    /// Index into the design list passed to fit and update.
    pub design: usize,
    pub method: Method,
    /// Columns exempt from the penalty.
    pub unpenalized: Vec<usize>,
    /// Column 0 is a constant one.
    pub intercept: bool,
}

/// Design assignment of one coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignChoice {
    pub design: usize,
    pub intercept: bool,
}

impl DesignChoice {
    pub fn with_intercept(design: usize) -> Self {
        Self { design, intercept: true }
    }

    pub fn without_intercept(design: usize) -> Self {
        Self { design, intercept: false }
    }
}

/// A model configuration together with the coordinate bindings of the
/// saturated parameterization (every coordinate any α could activate).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub config: ModelConfig,
    pub specs: Vec<CoordinateSpec>,
}

impl ModelSpec {
    pub fn new(config: ModelConfig, design_of: impl Fn(Coordinate) -> DesignChoice) -> Result<Self> {
        config.validate()?;
        let specs = all_coordinates(&config)
            .into_iter()
            .map(|coord| {
                let choice = design_of(coord);
                CoordinateSpec {
                    coord,
                    link: config.links.for_coordinate(coord),
                    design: choice.design,
                    method: config.method,
                    unpenalized: if choice.intercept { vec![0] } else { vec![] },
                    intercept: choice.intercept,
                }
            })
            .collect();
        Ok(Self { config, specs })
    }

    /// Every coordinate uses design 0, an intercept column.
    pub fn intercept_only(config: ModelConfig) -> Result<Self> {
        Self::new(config, |_| DesignChoice::with_intercept(0))
    }

    pub fn n_designs(&self) -> usize {
        self.specs.iter().map(|s| s.design + 1).max().unwrap_or(0)
    }
}

/// Saturated coordinate list in sweep order: locations, scale, degrees of freedom.
pub fn all_coordinates(config: &ModelConfig) -> Vec<Coordinate> {
    let d = config.dim;
    let mut out: Vec<Coordinate> = (0..d).map(Coordinate::Location).collect();
    match config.scale {
        ScaleKind::Cd => {
            out.extend(scale_param::cd_coordinates(d).into_iter().map(|(i, j)| Coordinate::Chol(i, j)));
        }
        ScaleKind::Lra => {
            out.extend((0..d).map(Coordinate::LraDiag));
            for r in 0..config.rank {
                out.extend((0..d).map(|i| Coordinate::LraV(i, r)));
            }
        }
    }
    if config.family == Family::StudentT {
        out.push(Coordinate::Dof);
    }
    out
}

/// Parameter group of a coordinate, in fitting order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub(crate) enum Group {
    Location,
    Scale,
    Dof,
}

pub(crate) fn group_of(c: Coordinate) -> Group {
    match c {
        Coordinate::Location(_) => Group::Location,
        Coordinate::Dof => Group::Dof,
        _ => Group::Scale,
    }
}

/// Structural value of a coordinate switched off by the mask.
pub(crate) fn structural_zero(c: Coordinate) -> f64 {
    match c {
        Coordinate::Chol(i, j) if i != j => 0.0,
        Coordinate::LraV(..) => 0.0,
        _ => f64::NAN,
    }
}

pub(crate) fn coordinate_active(mask: &RegularizationMask, c: Coordinate) -> bool {
    match c {
        Coordinate::Chol(i, j) => mask.is_active(i, j),
        Coordinate::LraV(d, r) => mask.is_active(d, r),
        _ => true,
    }
}

/// Per-coordinate estimation state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordState {
    pub spec: CoordinateSpec,
    pub active: bool,
    pub gram: GramianState,
    /// Coefficients on the original feature scale.
    pub beta: DVector<f64>,
    /// Standardized coefficients along the λ grid, kept for warm starts.
    pub path: Option<DMatrix<f64>>,
    pub lambdas: Vec<f64>,
    pub selected: usize,
    /// Discounted log-likelihood per λ, the running input of online λ selection.
    pub ll_path: Vec<f64>,
    /// Rows whose working quantities were not finite.
    pub skipped_rows: u64,
}

impl CoordState {
    pub fn nonzero(&self) -> usize {
        self.beta.iter().filter(|b| **b != 0.0).count()
    }
}

/// Diagnostics of the most recent fit or update.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    /// Discounted log-likelihood after each outer iteration.
    pub loglik_trace: Vec<f64>,
    pub converged: bool,
    pub skipped_rows: u64,
    pub halvings: usize,
    pub pd_fallbacks: u64,
    pub updates: u64,
    pub skipped_updates: u64,
}

/// A fitted model: coefficients, Gramians and selection state of every coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub version: u32,
    pub spec: ModelSpec,
    pub mask: RegularizationMask,
    pub coords: Vec<CoordState>,
    /// Parameters fitted for the most recent row.
    pub last_params: Option<MvParams>,
    /// Discounted in-sample log-likelihood of the last fit.
    pub loglik: f64,
    pub n_seen: u64,
    pub diagnostics: FitDiagnostics,
}

impl ModelState {
    pub fn config(&self) -> &ModelConfig {
        &self.spec.config
    }

    pub fn alpha(&self) -> usize {
        self.mask.alpha
    }

    /// Number of coordinates currently estimated.
    pub fn n_active_coordinates(&self) -> usize {
        self.coords.iter().filter(|c| c.active).count()
    }

    /// Total number of nonzero coefficients over active coordinates.
    pub fn n_nonzero(&self) -> usize {
        self.coords.iter().filter(|c| c.active).map(|c| c.nonzero()).sum()
    }

    pub fn coord(&self, c: Coordinate) -> Option<&CoordState> {
        self.coords.iter().find(|s| s.spec.coord == c)
    }

    /// Parameters for the next period given one design row per design id.
    pub fn predict_params(&self, rows: &[DVector<f64>]) -> Result<MvParams> {
        let theta = self.predict_theta(rows)?;
        let (params, _) = assemble_with_fallback(&self.spec.config, &self.coords, &theta)?;
        Ok(params)
    }

    /// [`Self::predict_params`] plus the shrinkage weight applied to restore
    /// positive definiteness (0 when none was needed).
    pub fn predict_params_checked(&self, rows: &[DVector<f64>]) -> Result<(MvParams, f64)> {
        let theta = self.predict_theta(rows)?;
        assemble_with_fallback(&self.spec.config, &self.coords, &theta)
    }

    fn predict_theta(&self, rows: &[DVector<f64>]) -> Result<Vec<f64>> {
        check_rows(&self.spec, rows)?;
        Ok(self
            .coords
            .iter()
            .map(|c| {
                if !c.active {
                    return structural_zero(c.spec.coord);
                }
                let x = &rows[c.spec.design];
                c.spec.link.inverse(x.dot(&c.beta))
            })
            .collect())
    }

    /// `m` joint draws for the next period.
    pub fn predict_ensemble(&self, rows: &[DVector<f64>], m: usize, seed: u64) -> Result<DMatrix<f64>> {
        let p = self.predict_params(rows)?;
        crate::distributions::sample(self.spec.config.family, &p, m, seed)
    }

    /// Log density of `y` under the predicted parameters.
    pub fn loglik_at(&self, y: &DVector<f64>, rows: &[DVector<f64>]) -> Result<f64> {
        let p = self.predict_params(rows)?;
        crate::distributions::loglik(self.spec.config.family, &p, y)
    }
}

pub(crate) fn check_rows(spec: &ModelSpec, rows: &[DVector<f64>]) -> Result<()> {
    for s in &spec.specs {
        if s.design >= rows.len() {
            return Err(Error::shape(format!("{} needs design {}, got {} rows", s.coord, s.design, rows.len())));
        }
    }
    Ok(())
}

/// Builds [`MvParams`] from per-coordinate values in [`all_coordinates`] order.
pub(crate) fn assemble(config: &ModelConfig, coords: &[CoordState], theta: &[f64]) -> Result<MvParams> {
    let d = config.dim;
    let mut mu = DVector::zeros(d);
    let mut nu = None;
    let mut l = if config.scale == ScaleKind::Cd { DMatrix::zeros(d, d) } else { DMatrix::zeros(0, 0) };
    let mut a = DVector::zeros(if config.scale == ScaleKind::Lra { d } else { 0 });
    let mut v = DMatrix::zeros(if config.scale == ScaleKind::Lra { d } else { 0 }, config.rank);
    for (c, &t) in coords.iter().zip(theta) {
        match c.spec.coord {
            Coordinate::Location(i) => mu[i] = t,
            Coordinate::Chol(i, j) => l[(i, j)] = t,
            Coordinate::LraDiag(i) => a[i] = t,
            Coordinate::LraV(i, r) => v[(i, r)] = t,
            Coordinate::Dof => nu = Some(t),
        }
    }
    let scale = match config.scale {
        ScaleKind::Cd => ScaleParam::Cd(CholeskyPrecision::new(l)?),
        ScaleKind::Lra => ScaleParam::Lra(LowRankPrecision::new(a, v)?),
    };
    MvParams::new(mu, scale, nu)
}

/// Shrinkage weights tried, in order, when an assembled precision is not PD.
pub const PD_SHRINKAGE: [f64; 3] = [0.1, 0.5, 1.0];

/// Assembles parameters and, if the precision fails a Cholesky test, shrinks
/// it toward its diagonal: `Ω ← (1−s) Ω + s diag(Ω)`.
pub(crate) fn assemble_with_fallback(
    config: &ModelConfig,
    coords: &[CoordState],
    theta: &[f64],
) -> Result<(MvParams, f64)> {
    let p = assemble(config, coords, theta)?;
    if crate::linalg::is_positive_definite(&p.scale.precision()) {
        return Ok((p, 0.0));
    }
    for &s in &PD_SHRINKAGE {
        let scale = shrink_toward_diagonal(&p.scale, s)?;
        if crate::linalg::is_positive_definite(&scale.precision()) {
            return Ok((MvParams::new(p.mu.clone(), scale, p.nu)?, s));
        }
    }
    Err(Error::NotPositiveDefinite("precision stays indefinite after shrinkage".into()))
}

/// The parameterization of `(1−s) Ω + s diag(Ω)`.
pub fn shrink_toward_diagonal(scale: &ScaleParam, s: f64) -> Result<ScaleParam> {
    match scale {
        ScaleParam::Lra(p) => {
            let rowsq = DVector::from_fn(p.dim(), |i, _| p.v().row(i).norm_squared());
            let a = p.diag() + rowsq * s;
            let v = p.v() * (1.0 - s).sqrt();
            Ok(ScaleParam::Lra(LowRankPrecision::new(a, v)?))
        }
        ScaleParam::Cd(c) => {
            let omega = c.precision();
            let d = omega.nrows();
            let mut shrunk = omega.clone() * (1.0 - s);
            for i in 0..d {
                shrunk[(i, i)] = omega[(i, i)];
            }
            Ok(ScaleParam::Cd(cd_factor_of_precision(&shrunk)?))
        }
    }
}

/// Lower-triangular `L` with `Lᵀ L = Ω`, as the inverse Cholesky factor of `Ω⁻¹`.
pub fn cd_factor_of_precision(omega: &DMatrix<f64>) -> Result<CholeskyPrecision> {
    let sigma = scale_param::covariance_from_precision(omega)?;
    cd_factor_of_covariance(&sigma)
}

/// Lower-triangular `L = A⁻¹` with `Σ = A Aᵀ`.
pub fn cd_factor_of_covariance(sigma: &DMatrix<f64>) -> Result<CholeskyPrecision> {
    let a = crate::linalg::cholesky(sigma)?;
    CholeskyPrecision::new(crate::linalg::lower_triangular_inverse(&a)?)
}
