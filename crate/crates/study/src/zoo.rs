//! The forecasting models compared in the study.

use std::fmt;
use std::str::FromStr;

use mvdr::copula::{self, CopulaState, SecondMoment};
use mvdr::distributions::{self, Family, MvParams};
use mvdr::estimator::{
    self, path_fit, AlphaDiagnostics, IcMode, InformationCriterion, LinkSet, Method, ModelConfig, ModelSpec,
    ModelState, DEFAULT_CD_ALPHA_MAX,
};
use mvdr::online_lasso::{self, GramianState};
use mvdr::scale_param::{ScaleKind, ScaleParam};
use mvdr::special::StudentT;
use mvdr::{linalg, scoring};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Result, StudyError};
use crate::features::{DesignDay, DesignLayout, TrainSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKind {
    /// Online LASSO mean per hour with Gaussian residuals, diagonal or full covariance.
    Larx { full: bool },
    /// Independent univariate t regressions per hour, optionally joined by a Gaussian copula.
    DistReg { copula: bool },
    MvDistReg { family: Family, scale: ScaleKind, method: Method, independent: bool },
}

impl ModelKind {
    /// The ten models of the study in report order.
    pub fn study_zoo() -> Vec<ModelKind> {
        let mv = |scale, method, independent| ModelKind::MvDistReg { family: Family::StudentT, scale, method, independent };
        vec![
            ModelKind::Larx { full: false },
            ModelKind::Larx { full: true },
            ModelKind::DistReg { copula: false },
            ModelKind::DistReg { copula: true },
            mv(ScaleKind::Cd, Method::Ols, true),
            mv(ScaleKind::Lra, Method::Ols, true),
            mv(ScaleKind::Cd, Method::Ols, false),
            mv(ScaleKind::Lra, Method::Ols, false),
            mv(ScaleKind::Cd, Method::Lasso, false),
            mv(ScaleKind::Lra, Method::Lasso, false),
        ]
    }

    pub fn name(&self) -> String {
        self.to_string()
    }

    /// File-system friendly name.
    pub fn slug(&self) -> String {
        let mut s: String = self
            .name()
            .chars()
            .map(|c| match c {
                'σ' => 's',
                'Σ' => 'S',
                c if c.is_ascii_alphanumeric() => c.to_ascii_lowercase(),
                _ => '_',
            })
            .collect();
        while s.contains("__") {
            s = s.replace("__", "_");
        }
        s.trim_matches('_').to_string()
    }

    pub fn is_multivariate_regression(&self) -> bool {
        matches!(self, ModelKind::MvDistReg { .. })
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelKind::Larx { full: false } => f.write_str("LARX + N(0, σ)"),
            ModelKind::Larx { full: true } => f.write_str("LARX + N(0, Σ)"),
            ModelKind::DistReg { copula: false } => f.write_str("oDistReg"),
            ModelKind::DistReg { copula: true } => f.write_str("oDistReg+GC"),
            ModelKind::MvDistReg { family, scale, method, independent } => {
                let fam = match family {
                    Family::StudentT => "t",
                    Family::Normal => "N",
                };
                let sc = match scale {
                    ScaleKind::Cd => "CD",
                    ScaleKind::Lra => "LRA",
                };
                let me = match method {
                    Method::Ols => "OLS",
                    Method::Lasso => "LASSO",
                };
                write!(f, "oMvDistReg({fam}, {sc}, {me}")?;
                if *independent {
                    f.write_str(", ind")?;
                }
                f.write_str(")")
            }
        }
    }
}

impl FromStr for ModelKind {
    type Err = StudyError;

    fn from_str(name: &str) -> Result<Self> {
        let compact: String = name.chars().filter(|c| !c.is_whitespace()).collect();
        let unknown = || StudyError::UnknownModel(name.to_string());
        match compact.as_str() {
            "LARX+N(0,σ)" | "LARX+N(0,sigma)" => return Ok(ModelKind::Larx { full: false }),
            "LARX+N(0,Σ)" | "LARX+N(0,Sigma)" => return Ok(ModelKind::Larx { full: true }),
            _ => {}
        }
        let lower = compact.to_ascii_lowercase();
        match lower.as_str() {
            "odistreg" => return Ok(ModelKind::DistReg { copula: false }),
            "odistreg+gc" => return Ok(ModelKind::DistReg { copula: true }),
            _ => {}
        }
        let inner = lower.strip_prefix("omvdistreg(").and_then(|s| s.strip_suffix(')')).ok_or_else(unknown)?;
        let parts: Vec<&str> = inner.split(',').collect();
        if !(3..=4).contains(&parts.len()) {
            return Err(unknown());
        }
        let family = match parts[0] {
            "t" => Family::StudentT,
            "n" => Family::Normal,
            _ => return Err(unknown()),
        };
        let scale = match parts[1] {
            "cd" => ScaleKind::Cd,
            "lra" => ScaleKind::Lra,
            _ => return Err(unknown()),
        };
        let method = match parts[2] {
            "ols" => Method::Ols,
            "lasso" => Method::Lasso,
            _ => return Err(unknown()),
        };
        let independent = match parts.get(3) {
            None => false,
            Some(&"ind") => true,
            Some(_) => return Err(unknown()),
        };
        Ok(ModelKind::MvDistReg { family, scale, method, independent })
    }
}

/// Per-model hyperparameters; unset fields fall back to the study defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelSettings {
    pub forget: Option<f64>,
    /// `aic`, `bic` or `hqc`.
    pub criterion: Option<String>,
    pub grid_len: Option<usize>,
    pub grid_eps: Option<f64>,
    /// Highest regularization level tried by the scale path.
    pub alpha_max: Option<usize>,
    pub rank: Option<usize>,
    pub max_outer: Option<usize>,
    pub max_inner: Option<usize>,
    pub ic_mode: Option<IcMode>,
    pub links: Option<LinkSet>,
    /// Ensemble size M.
    pub ensemble: Option<usize>,
}

impl ModelSettings {
    /// Fields of `self`, else of `base`.
    pub fn or(&self, base: &ModelSettings) -> ModelSettings {
        ModelSettings {
            forget: self.forget.or(base.forget),
            criterion: self.criterion.clone().or_else(|| base.criterion.clone()),
            grid_len: self.grid_len.or(base.grid_len),
            grid_eps: self.grid_eps.or(base.grid_eps),
            alpha_max: self.alpha_max.or(base.alpha_max),
            rank: self.rank.or(base.rank),
            max_outer: self.max_outer.or(base.max_outer),
            max_inner: self.max_inner.or(base.max_inner),
            ic_mode: self.ic_mode.or(base.ic_mode),
            links: self.links.or(base.links),
            ensemble: self.ensemble.or(base.ensemble),
        }
    }

    pub fn criterion(&self) -> Result<InformationCriterion> {
        match &self.criterion {
            None => Ok(InformationCriterion::AIC),
            Some(name) => InformationCriterion::from_name(name)
                .ok_or_else(|| StudyError::Config(format!("unknown information criterion '{name}'"))),
        }
    }

    /// Core configuration for a `dim`-variate model.
    pub fn model_config(&self, family: Family, scale: ScaleKind, method: Method, dim: usize) -> Result<ModelConfig> {
        let mut c = ModelConfig::new(family, scale, dim);
        c.method = method;
        c.criterion = self.criterion()?;
        if let Some(v) = self.forget {
            c.forget = v;
        }
        if let Some(v) = self.grid_len {
            c.grid_len = v;
        }
        if let Some(v) = self.grid_eps {
            c.grid_eps = v;
        }
        if let Some(v) = self.rank {
            c.rank = v;
        }
        if let Some(v) = self.max_outer {
            c.max_outer = v;
        }
        if let Some(v) = self.max_inner {
            c.max_inner = v;
        }
        if let Some(v) = self.links {
            c.links = v;
        }
        c.ic_mode = self.ic_mode;
        Ok(c)
    }
}

/// Predictive density of one day, kept for the log score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Density {
    Mv { family: Family, params: MvParams },
    Independent { marginals: Vec<StudentT> },
    Copula { copula: CopulaState, marginals: Vec<StudentT> },
}

impl Density {
    /// Negative log density of the realized prices.
    pub fn log_score(&self, y: &DVector<f64>) -> Result<f64> {
        Ok(match self {
            Density::Mv { family, params } => scoring::log_score(*family, params, y)?,
            Density::Independent { marginals } => -marginals.iter().zip(y.iter()).map(|(m, &v)| m.ln_pdf(v)).sum::<f64>(),
            Density::Copula { copula, marginals } => scoring::copula_log_score(copula, marginals, y)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// M × D ensemble.
    pub ensemble: DMatrix<f64>,
    pub density: Density,
}

/// Decorrelated seed for stream `(a, b)` of a base seed.
pub fn stream_seed(base: u64, a: u64, b: u64) -> u64 {
    let mut z = base ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct LarxHour {
    gram: GramianState,
    beta: DVector<f64>,
    lambda: f64,
    /// Coefficients along the last grid, the warm start of the next update.
    path: Option<DMatrix<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct LarxState {
    hours: Vec<LarxHour>,
    /// Second moment of the out-of-sample mean residuals.
    resid: SecondMoment,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct DistRegState {
    hours: Vec<ModelState>,
    copula: Option<CopulaState>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct MvState {
    model: ModelState,
    path: Vec<AlphaDiagnostics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum FitState {
    Unfitted,
    Larx(LarxState),
    DistReg(DistRegState),
    MvDistReg(MvState),
}

/// A model of the zoo together with its fitted state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forecaster {
    pub kind: ModelKind,
    pub settings: ModelSettings,
    pub layout: DesignLayout,
    state: FitState,
}

impl Forecaster {
    pub fn new(kind: ModelKind, settings: ModelSettings, dim: usize) -> Self {
        Self { kind, settings, layout: DesignLayout::new(dim), state: FitState::Unfitted }
    }

    pub fn name(&self) -> String {
        self.kind.name()
    }

    pub fn is_fitted(&self) -> bool {
        self.state != FitState::Unfitted
    }

    /// Fitted multivariate regression state, if this is such a model.
    pub fn model_state(&self) -> Option<&ModelState> {
        match &self.state {
            FitState::MvDistReg(s) => Some(&s.model),
            _ => None,
        }
    }

    pub fn fit(&mut self, train: &TrainSet) -> Result<()> {
        if train.y.ncols() != self.layout.dim {
            return Err(StudyError::Config(format!("model built for D={}, data has D={}", self.layout.dim, train.y.ncols())));
        }
        self.state = match self.kind {
            ModelKind::Larx { .. } => FitState::Larx(self.fit_larx(train)?),
            ModelKind::DistReg { copula } => FitState::DistReg(self.fit_distreg(train, copula)?),
            ModelKind::MvDistReg { family, scale, method, independent } => {
                let config = self.settings.model_config(family, scale, method, self.layout.dim)?;
                let layout = self.layout;
                let spec = ModelSpec::new(config, |c| layout.choice(c))?;
                if independent {
                    let model = ModelState::fit_initial(&spec, &train.y, &train.designs, 0)?;
                    FitState::MvDistReg(MvState { model, path: Vec::new() })
                } else {
                    let cap = self.settings.alpha_max.unwrap_or(match scale {
                        ScaleKind::Cd => DEFAULT_CD_ALPHA_MAX,
                        ScaleKind::Lra => usize::MAX,
                    });
                    let fit = path_fit(&spec, &train.y, &train.designs, cap)?;
                    FitState::MvDistReg(MvState { model: fit.model, path: fit.diagnostics })
                }
            }
        };
        Ok(())
    }

    pub fn predict(&self, rows: &DesignDay, m: usize, seed: u64) -> Result<Prediction> {
        match &self.state {
            FitState::Unfitted => Err(StudyError::Model { model: self.name(), reason: "predict before fit".into() }),
            FitState::Larx(s) => {
                let mean = larx_mean(&self.layout, s, rows);
                let cov = larx_covariance(s, matches!(self.kind, ModelKind::Larx { full: true }))?;
                let factor = estimator::cd_factor_of_covariance(&cov)?;
                let params = MvParams::new(mean, ScaleParam::Cd(factor), None)?;
                let ensemble = distributions::sample(Family::Normal, &params, m, seed)?;
                Ok(Prediction { ensemble, density: Density::Mv { family: Family::Normal, params } })
            }
            FitState::DistReg(s) => {
                let marginals = distreg_marginals(s, rows)?;
                match &s.copula {
                    Some(c) => {
                        let ensemble = copula::copula_sample(c, &marginals, m, seed)?;
                        Ok(Prediction { ensemble, density: Density::Copula { copula: c.clone(), marginals } })
                    }
                    None => {
                        let mut ensemble = DMatrix::zeros(m, self.layout.dim);
                        for (h, model) in s.hours.iter().enumerate() {
                            let x = model.predict_ensemble(rows, m, stream_seed(seed, h as u64, 1))?;
                            ensemble.set_column(h, &x.column(0));
                        }
                        Ok(Prediction { ensemble, density: Density::Independent { marginals } })
                    }
                }
            }
            FitState::MvDistReg(s) => {
                let params = s.model.predict_params(rows)?;
                let family = s.model.config().family;
                let ensemble = distributions::sample(family, &params, m, seed)?;
                Ok(Prediction { ensemble, density: Density::Mv { family, params } })
            }
        }
    }

    /// Absorbs the realized prices of the day whose design rows are `rows`.
    pub fn update(&mut self, rows: &DesignDay, y: &DVector<f64>) -> Result<()> {
        let name = self.name();
        let layout = self.layout;
        let settings = self.settings.clone();
        match &mut self.state {
            FitState::Unfitted => return Err(StudyError::Model { model: name, reason: "update before fit".into() }),
            FitState::Larx(s) => {
                let resid = y - larx_mean(&layout, s, rows);
                s.resid.update(&resid)?;
                let ic = settings.criterion()?;
                for (h, hour) in s.hours.iter_mut().enumerate() {
                    hour.gram.update(rows[layout.mu(h)].as_slice(), y[h], 1.0)?;
                    let (beta, lambda, path) = larx_select(&hour.gram, hour.path.as_ref(), &settings, &ic)?;
                    hour.beta = beta;
                    hour.lambda = lambda;
                    hour.path = path;
                }
            }
            FitState::DistReg(s) => {
                if let Some(c) = &mut s.copula {
                    let marginals = distreg_marginals_of(&s.hours, rows)?;
                    let u: mvdr::Result<Vec<f64>> = (0..y.len()).map(|h| copula::pit(&marginals[h], y[h])).collect();
                    c.update(&DVector::from_vec(u?))?;
                }
                for (h, model) in s.hours.iter_mut().enumerate() {
                    model.update_one(&DVector::from_element(1, y[h]), rows)?;
                }
            }
            FitState::MvDistReg(s) => {
                let report = s.model.update_one(y, rows)?;
                if report.skipped {
                    log::warn!("{name}: update skipped, non-finite working quantities");
                }
            }
        }
        Ok(())
    }

    pub fn diagnostics(&self) -> serde_json::Value {
        match &self.state {
            FitState::Unfitted => json!({ "fitted": false }),
            FitState::Larx(s) => json!({
                "fitted": true,
                "nonzero": s.hours.iter().map(|h| h.beta.iter().filter(|b| **b != 0.0).count()).collect::<Vec<_>>(),
                "residual_updates": s.resid.count(),
            }),
            FitState::DistReg(s) => json!({
                "fitted": true,
                "nonzero": s.hours.iter().map(|m| m.n_nonzero()).collect::<Vec<_>>(),
                "skipped_updates": s.hours.iter().map(|m| m.diagnostics.skipped_updates).sum::<u64>(),
                "copula_updates": s.copula.as_ref().map(|c| c.count()),
            }),
            FitState::MvDistReg(s) => json!({
                "fitted": true,
                "alpha": s.model.alpha(),
                "active_coordinates": s.model.n_active_coordinates(),
                "nonzero": s.model.n_nonzero(),
                "path": s.path,
                "last_fit": s.model.diagnostics,
            }),
        }
    }

    fn fit_larx(&self, train: &TrainSet) -> Result<LarxState> {
        let ic = self.settings.criterion()?;
        let gamma = self.settings.forget.unwrap_or(0.0);
        let mut hours = Vec::with_capacity(self.layout.dim);
        for h in 0..self.layout.dim {
            let x = &train.designs[self.layout.mu(h)];
            let mut gram = GramianState::new(x.ncols(), gamma)?;
            for n in 0..train.n() {
                let row: Vec<f64> = x.row(n).iter().copied().collect();
                gram.update(&row, train.y[(n, h)], 1.0)?;
            }
            let (beta, lambda, path) = larx_select(&gram, None, &self.settings, &ic)?;
            hours.push(LarxHour { gram, beta, lambda, path });
        }
        let mut state = LarxState { hours, resid: SecondMoment::new(self.layout.dim) };
        for n in 0..train.n() {
            let r = train.y_row(n) - larx_mean(&self.layout, &state, &train.rows(n));
            state.resid.update(&r)?;
        }
        Ok(state)
    }

    fn fit_distreg(&self, train: &TrainSet, with_copula: bool) -> Result<DistRegState> {
        let mut hours = Vec::with_capacity(self.layout.dim);
        for h in 0..self.layout.dim {
            let config = self.settings.model_config(Family::StudentT, ScaleKind::Cd, Method::Lasso, 1)?;
            let layout = self.layout;
            let spec = ModelSpec::new(config, |c| layout.univariate_choice(h, c))?;
            let y = DMatrix::from_column_slice(train.n(), 1, train.y.column(h).as_slice());
            hours.push(ModelState::fit_initial(&spec, &y, &train.designs, 0)?);
        }
        let copula = if with_copula {
            let mut pits = Vec::with_capacity(train.n());
            for n in 0..train.n() {
                let marginals = distreg_marginals_of(&hours, &train.rows(n))?;
                let u: mvdr::Result<Vec<f64>> = (0..self.layout.dim).map(|h| copula::pit(&marginals[h], train.y[(n, h)])).collect();
                pits.push(DVector::from_vec(u?));
            }
            Some(CopulaState::from_pits(&pits)?)
        } else {
            None
        };
        Ok(DistRegState { hours, copula })
    }
}

fn larx_mean(layout: &DesignLayout, s: &LarxState, rows: &DesignDay) -> DVector<f64> {
    DVector::from_fn(layout.dim, |h, _| rows[layout.mu(h)].dot(&s.hours[h].beta))
}

fn larx_covariance(s: &LarxState, full: bool) -> Result<DMatrix<f64>> {
    let m = s.resid.moment();
    let d = m.nrows();
    let mut cov = if full { m.clone() } else { DMatrix::from_diagonal(&m.diagonal()) };
    let scale = (m.trace() / d as f64).max(f64::MIN_POSITIVE);
    let mut eps = 1e-10;
    while !linalg::is_positive_definite(&cov) {
        if eps > 1.0 {
            return Err(StudyError::Model { model: "LARX".into(), reason: "residual covariance is degenerate".into() });
        }
        for i in 0..d {
            cov[(i, i)] += eps * scale;
        }
        eps *= 10.0;
    }
    Ok(cov)
}

/// Coordinate-descent tolerance of the LARX mean, relative to the response RMS.
/// The lag and fundamental columns are strongly collinear and a tighter
/// tolerance costs hundreds of sweeps per λ for no visible change in forecasts.
pub const LARX_CD_TOL: f64 = 1e-4;

/// Online LASSO path on the Gramian with a Gaussian-profile information criterion
/// `N log(RSS/N) + penalty(K)`. Each λ starts from the previous path when given.
fn larx_select(
    gram: &GramianState,
    warm: Option<&DMatrix<f64>>,
    settings: &ModelSettings,
    ic: &InformationCriterion,
) -> Result<(DVector<f64>, f64, Option<DMatrix<f64>>)> {
    let len = settings.grid_len.unwrap_or(online_lasso::DEFAULT_GRID_LEN);
    let eps = settings.grid_eps.unwrap_or(online_lasso::DEFAULT_EPS);
    let grid = online_lasso::lambda_grid(gram, len, eps, &[0])?;
    let j = gram.dim();
    let n = gram.n_eff().max(1.0);
    if grid.degenerate {
        let mut beta = DVector::zeros(j);
        if gram.g()[(0, 0)] > 0.0 {
            beta[0] = gram.h()[0] / gram.g()[(0, 0)];
        }
        return Ok((beta, 0.0, None));
    }
    let rms = (gram.rss(&DVector::zeros(j)) / gram.weight_sum()).sqrt();
    let tol = LARX_CD_TOL * if rms > 0.0 { rms } else { 1.0 };
    let warm = warm.filter(|p| p.nrows() == grid.values.len() && p.ncols() == j);
    let mut path = DMatrix::zeros(grid.values.len(), j);
    let mut prev = DVector::zeros(j);
    let mut best = (f64::INFINITY, 0);
    for (l, &lam) in grid.values.iter().enumerate() {
        let start = warm.map_or_else(|| prev.clone(), |p| p.row(l).transpose());
        let beta = online_lasso::cd_solve(gram, &start, lam, &[0], online_lasso::DEFAULT_MAX_ITER, tol)?.beta;
        let rss = gram.rss(&beta).max(1e-300);
        let k = beta.iter().filter(|b| **b != 0.0).count();
        let v = n * (rss / n).ln() + ic.penalty(k, n);
        if v < best.0 {
            best = (v, l);
        }
        path.set_row(l, &beta.transpose());
        prev = beta;
    }
    Ok((path.row(best.1).transpose(), grid.values[best.1], Some(path)))
}

fn distreg_marginals(s: &DistRegState, rows: &DesignDay) -> Result<Vec<StudentT>> {
    distreg_marginals_of(&s.hours, rows)
}

fn distreg_marginals_of(hours: &[ModelState], rows: &DesignDay) -> Result<Vec<StudentT>> {
    hours
        .iter()
        .map(|m| {
            let p = m.predict_params(rows)?;
            let prec = p.scale.precision()[(0, 0)];
            Ok(StudentT::new(p.mu[0], 1.0 / prec.sqrt(), p.nu.unwrap_or(f64::INFINITY))?)
        })
        .collect()
}
