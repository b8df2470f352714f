use nalgebra::{DMatrix, DVector};

use super::{
    assemble, check_rows, coordinate_active, group_of, structural_zero, CoordState, FitDiagnostics, Group,
    IcMode, Method, ModelSpec, ModelState, NU_PILOT, NU_START, SNAPSHOT_VERSION, WEIGHT_FLOOR,
};
use crate::distributions::{Coordinate, Family, MvParams, RowEval};
use crate::error::{Error, Result};
use crate::exec::map_indexed;
use crate::linalg;
use crate::links::LinkKind;
use crate::online_lasso::{cd_solve, lambda_grid, rls_solve, GramianState};
use crate::scale_param::{self, mask_for, RegularizationMask, ScaleKind};

/// Score `u = ∂ℓ/∂η`, weight `w = −∂²ℓ/∂η²` (floored) and working response
/// `z = η + u/w` of one coordinate at one observation.
pub fn score_weight_working(
    family: Family,
    params: &MvParams,
    y: &DVector<f64>,
    coord: Coordinate,
    link: LinkKind,
) -> Result<(f64, f64, f64)> {
    let ev = RowEval::new(family, params, y)?;
    let (d1, d2) = ev.coord(coord)?;
    let theta = coordinate_value(params, coord)?;
    let eta = link.eval(theta)?;
    working(d1, d2, theta, eta, link)
}

fn coordinate_value(p: &MvParams, c: Coordinate) -> Result<f64> {
    use crate::scale_param::ScaleParam;
    Ok(match (c, &p.scale) {
        (Coordinate::Location(i), _) => p.mu[i],
        (Coordinate::Chol(i, j), ScaleParam::Cd(s)) => s.get(i, j),
        (Coordinate::LraDiag(d), ScaleParam::Lra(s)) => s.diag()[d],
        (Coordinate::LraV(d, r), ScaleParam::Lra(s)) => s.v()[(d, r)],
        (Coordinate::Dof, _) => p.nu.ok_or_else(|| Error::invalid("no degrees of freedom"))?,
        _ => return Err(Error::Unsupported(format!("{c} on this parameterization"))),
    })
}

/// Chains parameter derivatives through the link.
fn working(d1: f64, d2: f64, theta: f64, eta: f64, link: LinkKind) -> Result<(f64, f64, f64)> {
    let g1 = link.deriv1(theta)?;
    let g2 = link.deriv2(theta)?;
    let u = d1 / g1;
    let w = (-(d2 * g1 - d1 * g2) / (g1 * g1 * g1)).max(WEIGHT_FLOOR);
    let z = eta + u / w;
    if u.is_finite() && w.is_finite() && z.is_finite() {
        Ok((u, w, z))
    } else {
        Err(Error::invalid(format!("non-finite working quantities (u={u}, w={w}, z={z})")))
    }
}

/// First-iteration blend `(i θ_fit + θ_prev) / (i + 1)`.
pub fn dampened_init(theta_fit: f64, theta_prev: f64, i: usize) -> f64 {
    let i = i as f64;
    (i * theta_fit + theta_prev) / (i + 1.0)
}

/// Outcome of one online update.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateReport {
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub converged: bool,
    /// Coordinates whose new-row working quantities were not finite.
    pub skipped_coordinates: usize,
    /// The whole observation was unusable and nothing changed.
    pub skipped: bool,
}

struct RowWork {
    u: f64,
    ll: f64,
    w: f64,
    z: f64,
    ok: bool,
}

struct Solution {
    beta: DVector<f64>,
    path: Option<DMatrix<f64>>,
    lambdas: Vec<f64>,
    selected: usize,
    ll_path: Vec<f64>,
}

/// State of one fitting run over a block of rows.
struct Engine<'a> {
    spec: &'a ModelSpec,
    coords: Vec<CoordState>,
    /// Gramians and λ log-likelihoods the rows are added to (online only).
    base: Option<Vec<(GramianState, Vec<f64>)>>,
    y: Vec<DVector<f64>>,
    /// One N × J matrix per design id.
    designs: Vec<DMatrix<f64>>,
    /// Fitted values `[coordinate][row]`.
    theta: Vec<Vec<f64>>,
    eta: Vec<Vec<f64>>,
    /// Row discount `(1−γ)^{N−1−n}`.
    disc: Vec<f64>,
    ll_total: f64,
    reset_nu: bool,
    diag: FitDiagnostics,
    skipped_coordinates: usize,
}

/// Convergence tolerance of coordinate descent, relative to the RMS of the
/// working response so that it does not depend on the units of the coordinate.
fn cd_tolerance(gram: &GramianState, tol: f64) -> f64 {
    let w = gram.weight_sum();
    let rms = if w > 0.0 { (gram.rss(&DVector::zeros(gram.dim())) / w).sqrt() } else { 0.0 };
    if rms.is_finite() && rms > 0.0 {
        tol * rms
    } else {
        tol
    }
}

fn feature_scales(gram: &GramianState, intercept: bool) -> DVector<f64> {
    let j = gram.dim();
    let g = gram.g();
    let wsum = if intercept { g[(0, 0)] } else { gram.weight_sum() };
    DVector::from_fn(j, |k, _| {
        if intercept && k == 0 {
            return 1.0;
        }
        if !(wsum > 0.0) {
            return 1.0;
        }
        let second = g[(k, k)] / wsum;
        let var = if intercept {
            let mean = g[(0, k)] / wsum;
            second - mean * mean
        } else {
            second
        };
        if var > 1e-12 * second.max(1e-300) && var.is_finite() {
            1.0 / var.sqrt()
        } else {
            0.0
        }
    })
}

fn rel_change(new: f64, old: f64) -> f64 {
    (new - old).abs() / old.abs().max(1.0)
}

impl<'a> Engine<'a> {
    fn family(&self) -> Family {
        self.spec.config.family
    }

    fn n_rows(&self) -> usize {
        self.y.len()
    }

    fn row_theta(&self, n: usize) -> Vec<f64> {
        self.theta.iter().map(|t| t[n]).collect()
    }

    fn row_params(&self, n: usize) -> Result<MvParams> {
        assemble(&self.spec.config, &self.coords, &self.row_theta(n))
    }

    fn design_row(&self, design: usize, n: usize) -> DVector<f64> {
        self.designs[design].row(n).transpose()
    }

    /// Discounted log-likelihood of all rows at the current fitted values.
    fn loglik(&self) -> Result<f64> {
        let fam = self.family();
        let lls = map_indexed(self.spec.config.exec, self.n_rows(), |n| -> Result<f64> {
            let p = self.row_params(n)?;
            Ok(RowEval::new(fam, &p, &self.y[n])?.loglik())
        });
        let mut s = 0.0;
        for (n, l) in lls.into_iter().enumerate() {
            s += self.disc[n] * l?;
        }
        Ok(s)
    }

    /// Log-likelihood with coordinate `ci` replaced by `values`; −∞ on invalid parameters.
    fn loglik_with(&self, ci: usize, values: &[f64]) -> f64 {
        let fam = self.family();
        let lls = map_indexed(self.spec.config.exec, self.n_rows(), |n| {
            let mut row = self.row_theta(n);
            row[ci] = values[n];
            match assemble(&self.spec.config, &self.coords, &row)
                .and_then(|p| Ok(RowEval::new(fam, &p, &self.y[n])?.loglik()))
            {
                Ok(l) if l.is_finite() => l,
                _ => f64::NEG_INFINITY,
            }
        });
        lls.iter().zip(&self.disc).map(|(l, d)| d * l).sum()
    }

    /// Log-likelihood and score per row with coordinate `ci` set to `values`.
    fn first_order_anchor(&self, ci: usize, values: &[f64]) -> Vec<Option<(f64, f64)>> {
        let fam = self.family();
        let coord = self.coords[ci].spec.coord;
        map_indexed(self.spec.config.exec, self.n_rows(), |n| {
            let mut row = self.row_theta(n);
            row[ci] = values[n];
            let p = assemble(&self.spec.config, &self.coords, &row).ok()?;
            let ev = RowEval::new(fam, &p, &self.y[n]).ok()?;
            let (d1, _) = ev.coord(coord).ok()?;
            let ll = ev.loglik();
            (ll.is_finite() && d1.is_finite()).then_some((ll, d1))
        })
    }

    fn row_work(&self, ci: usize) -> Result<Vec<RowWork>> {
        let fam = self.family();
        let coord = self.coords[ci].spec.coord;
        let link = self.coords[ci].spec.link;
        let out = map_indexed(self.spec.config.exec, self.n_rows(), |n| -> Result<RowWork> {
            let p = self.row_params(n)?;
            let ev = RowEval::new(fam, &p, &self.y[n])?;
            let ll = ev.loglik();
            let (d1, d2) = ev.coord(coord)?;
            match working(d1, d2, self.theta[ci][n], self.eta[ci][n], link) {
                Ok((u, w, z)) => Ok(RowWork { u, ll, w, z, ok: true }),
                Err(_) => Ok(RowWork { u: 0.0, ll, w: 0.0, z: 0.0, ok: false }),
            }
        });
        out.into_iter().collect()
    }

    fn thetas_for(&self, ci: usize, beta: &DVector<f64>) -> (Vec<f64>, Vec<f64>) {
        let spec = &self.coords[ci].spec;
        let eta: Vec<f64> = (&self.designs[spec.design] * beta).iter().copied().collect();
        let theta = eta.iter().map(|e| spec.link.inverse(*e)).collect();
        (theta, eta)
    }

    fn solve(&self, ci: usize, gram: &GramianState, work: &[RowWork], base_ll: Option<&[f64]>) -> Result<Solution> {
        let cfg = &self.spec.config;
        let cs = &self.coords[ci];
        let spec = &cs.spec;
        let j = gram.dim();
        if spec.method == Method::Ols {
            let beta = match rls_solve(gram) {
                Ok(b) => b,
                // collinear designs: the minimum-norm-free CD solution at λ = 0
                Err(_) => {
                    let s = feature_scales(gram, spec.intercept);
                    let r = cd_solve(&gram.scaled(&s), &DVector::zeros(j), 0.0, &[], cfg.cd_max_iter, cfg.cd_tol)?;
                    r.beta.component_mul(&s)
                }
            };
            return Ok(Solution { beta, path: None, lambdas: vec![0.0], selected: 0, ll_path: vec![] });
        }

        let s = if cfg.standardize { feature_scales(gram, spec.intercept) } else { DVector::from_element(j, 1.0) };
        let scaled = gram.scaled(&s);
        let tol = cd_tolerance(gram, cfg.cd_tol);
        let grid = lambda_grid(&scaled, cfg.grid_len, cfg.grid_eps, &spec.unpenalized)?;
        let lambdas = if grid.degenerate { vec![f64::MAX] } else { grid.values };
        let nl = lambdas.len();
        let stored = cs.path.as_ref().filter(|p| p.nrows() == nl && p.ncols() == j);

        let mut path = DMatrix::zeros(nl, j);
        let mut prev = DVector::zeros(j);
        for (l, &lam) in lambdas.iter().enumerate() {
            let start = match stored {
                Some(p) => p.row(l).transpose(),
                None => prev.clone(),
            };
            let r = cd_solve(&scaled, &start, lam, &spec.unpenalized, cfg.cd_max_iter, tol)?;
            path.set_row(l, &r.beta.transpose());
            prev = r.beta;
        }

        let betas: Vec<DVector<f64>> = (0..nl).map(|l| path.row(l).transpose().component_mul(&s)).collect();
        let nonzero: Vec<usize> = betas.iter().map(|b| b.iter().filter(|v| **v != 0.0).count()).collect();
        let ll_rows: Vec<f64> = match cfg.ic_mode() {
            IcMode::FirstOrder => {
                // linear expansion around the most regularized fit
                let (theta0, _) = self.thetas_for(ci, &betas[0]);
                let anchor = self.first_order_anchor(ci, &theta0);
                betas
                    .iter()
                    .map(|b| {
                        let (theta, _) = self.thetas_for(ci, b);
                        let mut acc = 0.0;
                        for (n, a) in anchor.iter().enumerate() {
                            acc += match a {
                                Some((ll, d1)) => self.disc[n] * (ll + d1 * (theta[n] - theta0[n])),
                                None => f64::NEG_INFINITY,
                            };
                        }
                        acc
                    })
                    .collect()
            }
            IcMode::SecondOrder => betas
                .iter()
                .map(|b| {
                    let (_, eta) = self.thetas_for(ci, b);
                    let mut acc = 0.0;
                    for (n, w) in work.iter().enumerate() {
                        let step = if w.ok {
                            let de = eta[n] - self.eta[ci][n];
                            w.u * de - 0.5 * w.w * de * de
                        } else {
                            0.0
                        };
                        acc += self.disc[n] * (w.ll + step);
                    }
                    acc
                })
                .collect(),
            IcMode::Exact => betas
                .iter()
                .map(|b| {
                    let (theta, _) = self.thetas_for(ci, b);
                    self.loglik_with(ci, &theta)
                })
                .collect(),
        };
        let decay = (1.0 - cfg.forget).powi(self.n_rows() as i32);
        let ll_path: Vec<f64> = match base_ll {
            Some(b) if b.len() == nl => ll_rows.iter().zip(b).map(|(r, b)| decay * b + r).collect(),
            _ => ll_rows,
        };
        let selected = super::select_lambda(&cfg.criterion, &ll_path, &nonzero, gram.n_eff());
        Ok(Solution { beta: betas[selected].clone(), path: Some(path), lambdas, selected, ll_path })
    }

    fn penalty(&self, beta: &DVector<f64>, n_eff: f64) -> f64 {
        let k = beta.iter().filter(|v| **v != 0.0).count();
        self.spec.config.criterion.penalty(k, n_eff)
    }

    /// One IRLS step for coordinate `ci`. `outer`/`inner` locate the step for damping.
    fn coordinate_step(&mut self, ci: usize, outer: usize, inner: usize, damp: bool) -> Result<()> {
        let work = self.row_work(ci)?;
        let spec = self.coords[ci].spec.clone();
        let j = self.designs[spec.design].ncols();
        let online = self.base.is_some();

        if online && work.iter().any(|w| !w.ok) {
            // the new row cannot inform this coordinate; keep the stored state
            self.skipped_coordinates += 1;
            self.coords[ci].skipped_rows += 1;
            return Ok(());
        }

        let (mut gram, base_ll) = match &self.base {
            Some(b) => (b[ci].0.clone(), Some(b[ci].1.clone())),
            None => (GramianState::new(j, self.spec.config.forget)?, None),
        };
        let zeros = vec![0.0; j];
        let mut skipped = 0u64;
        for (n, w) in work.iter().enumerate() {
            let x = self.design_row(spec.design, n);
            if w.ok {
                gram.update(x.as_slice(), w.z, w.w)?;
            } else {
                gram.update(&zeros, 0.0, 0.0)?;
                skipped += 1;
            }
        }
        self.coords[ci].skipped_rows += skipped;
        self.diag.skipped_rows += skipped;

        let sol = self.solve(ci, &gram, &work, base_ll.as_deref())?;
        let old_beta = self.coords[ci].beta.clone();
        let old_theta = self.theta[ci].clone();
        let old_eta = self.eta[ci].clone();
        let ll_old: f64 = work.iter().zip(&self.disc).map(|(w, d)| d * w.ll).sum();

        let (fit_theta, fit_eta) = self.thetas_for(ci, &sol.beta);
        let dampen = damp && outer == 0 && spec.coord.is_scale() && self.spec.config.damping && !online;
        let (mut theta, mut eta) = if dampen {
            let i = inner + 1;
            let th: Vec<f64> = fit_theta.iter().zip(&old_theta).map(|(f, p)| dampened_init(*f, *p, i)).collect();
            let et: Vec<f64> = th.iter().map(|t| spec.link.eval(*t).unwrap_or(f64::NAN)).collect();
            (th, et)
        } else {
            (fit_theta, fit_eta)
        };
        let mut beta = sol.beta.clone();
        let mut ll_new = self.loglik_with(ci, &theta);

        let n_eff = gram.n_eff();
        let pen_old = self.penalty(&old_beta, n_eff);
        // guards against overshooting; a sparser step may give up what it saves in penalty
        let acceptable = |ll: f64, b: &DVector<f64>, this: &Self| -> bool {
            if !ll.is_finite() {
                return false;
            }
            if online || dampen {
                return true;
            }
            let allowance = 0.5 * (pen_old - this.penalty(b, n_eff)).max(0.0);
            ll >= ll_old - allowance - 1e-6 * ll_old.abs() - 1e-9
        };
        if !acceptable(ll_new, &beta, self) {
            let mut t = 1.0;
            let mut accepted = false;
            for _ in 0..8 {
                t *= 0.5;
                let b = &old_beta + (&sol.beta - &old_beta) * t;
                let et: Vec<f64> = old_eta.iter().zip(&eta_target(&self.designs[spec.design], &sol.beta)).map(|(o, n)| o + t * (n - o)).collect();
                let th: Vec<f64> = et.iter().map(|e| spec.link.inverse(*e)).collect();
                let ll = self.loglik_with(ci, &th);
                self.diag.halvings += 1;
                if acceptable(ll, &b, self) {
                    beta = b;
                    theta = th;
                    eta = et;
                    ll_new = ll;
                    accepted = true;
                    break;
                }
            }
            if !accepted {
                // keep the previous fit but still absorb the Gramian
                beta = old_beta;
                theta = old_theta;
                eta = old_eta;
                ll_new = ll_old;
            }
        }

        let cs = &mut self.coords[ci];
        cs.gram = gram;
        cs.beta = beta;
        cs.path = sol.path;
        cs.lambdas = sol.lambdas;
        cs.selected = sol.selected;
        cs.ll_path = sol.ll_path;
        self.theta[ci] = theta;
        self.eta[ci] = eta;
        self.ll_total = ll_new;
        Ok(())
    }

    fn reset_dof(&mut self) {
        for ci in 0..self.coords.len() {
            if self.coords[ci].spec.coord == Coordinate::Dof {
                let link = self.coords[ci].spec.link;
                let eta0 = link.eval(NU_START).expect("valid start");
                self.theta[ci] = vec![NU_START; self.n_rows()];
                self.eta[ci] = vec![eta0; self.n_rows()];
                self.coords[ci].beta = constant_beta(&self.designs[self.coords[ci].spec.design], eta0, self.coords[ci].spec.intercept);
            }
        }
    }

    fn run(&mut self, damp: bool) -> Result<()> {
        let cfg = self.spec.config.clone();
        let mut groups = vec![Group::Location, Group::Scale];
        if cfg.family == Family::StudentT {
            groups.push(Group::Dof);
        }
        self.ll_total = self.loglik()?;
        let mut ll_prev_outer = self.ll_total;
        let mut trace: Vec<f64> = Vec::new();
        self.diag.converged = false;
        for outer in 0..cfg.max_outer {
            for &g in &groups {
                if g == Group::Dof && self.reset_nu {
                    self.reset_dof();
                    self.ll_total = self.loglik()?;
                    self.reset_nu = false;
                }
                let members: Vec<usize> = (0..self.coords.len())
                    .filter(|&c| self.coords[c].active && group_of(self.coords[c].spec.coord) == g)
                    .collect();
                let mut ll_prev = self.ll_total;
                for inner in 0..cfg.max_inner {
                    for &ci in &members {
                        self.coordinate_step(ci, outer, inner, damp)?;
                    }
                    self.diag.inner_iterations += 1;
                    if rel_change(self.ll_total, ll_prev) < cfg.tol_inner {
                        break;
                    }
                    ll_prev = self.ll_total;
                }
            }
            self.diag.outer_iterations += 1;
            trace.push(self.ll_total);
            let r = trace.len();
            if r >= 3 && (trace[r - 3] - trace[r - 1]) > 1e3 {
                return Err(Error::Diverged(format!(
                    "negative log-likelihood rose from {:.3} to {:.3} over two outer iterations",
                    -trace[r - 3],
                    -trace[r - 1]
                )));
            }
            if !self.ll_total.is_finite() {
                return Err(Error::Diverged("non-finite log-likelihood".into()));
            }
            if outer > 0 && rel_change(self.ll_total, ll_prev_outer) < cfg.tol_outer {
                self.diag.converged = true;
                break;
            }
            ll_prev_outer = self.ll_total;
        }
        self.diag.loglik_trace = trace;
        Ok(())
    }
}

fn eta_target(x: &DMatrix<f64>, beta: &DVector<f64>) -> Vec<f64> {
    (x * beta).iter().copied().collect()
}

/// Coefficients reproducing a constant predictor `η0` as closely as the design allows.
fn constant_beta(x: &DMatrix<f64>, eta0: f64, intercept: bool) -> DVector<f64> {
    let j = x.ncols();
    let mut b = DVector::zeros(j);
    if eta0 == 0.0 || j == 0 {
        return b;
    }
    if intercept {
        b[0] = eta0;
        return b;
    }
    let mut g = x.transpose() * x;
    for k in 0..j {
        g[(k, k)] += 1e-8 * (1.0 + g[(k, k)]);
    }
    let h = x.transpose() * DVector::from_element(x.nrows(), eta0);
    match linalg::cholesky(&g) {
        Ok(l) => linalg::chol_solve(&l, &h),
        Err(_) => b,
    }
}

fn sample_covariance(y: &[DVector<f64>]) -> DMatrix<f64> {
    let n = y.len();
    let d = y[0].len();
    let mean = y.iter().fold(DVector::zeros(d), |acc, r| acc + r) / n as f64;
    let mut s = DMatrix::zeros(d, d);
    for r in y {
        let c = r - &mean;
        s += &c * c.transpose();
    }
    s / ((n.max(2) - 1) as f64)
}

fn loaded(s: &DMatrix<f64>) -> DMatrix<f64> {
    let d = s.nrows();
    let load = 1e-3 * s.trace() / d as f64;
    let mut out = s.clone();
    for i in 0..d {
        out[(i, i)] += load.max(1e-12);
    }
    out
}

/// Loading column closing part of the gap between a target and the current precision.
fn eigen_loading(target: &DMatrix<f64>, current: &DMatrix<f64>) -> DVector<f64> {
    let mut delta = target - current;
    linalg::symmetrize(&mut delta);
    let (vals, vecs) = linalg::sym_eigen_desc(&delta);
    let lam = vals[0].max(0.0);
    let mut e = vecs.column(0).into_owned();
    let k = e.iamax();
    if e[k] < 0.0 {
        e = -e;
    }
    e * lam.sqrt()
}

fn validate_data(spec: &ModelSpec, y: &DMatrix<f64>, designs: &[DMatrix<f64>]) -> Result<()> {
    let n = y.nrows();
    if y.ncols() != spec.config.dim {
        return Err(Error::shape(format!("response has {} columns, model dimension {}", y.ncols(), spec.config.dim)));
    }
    if designs.len() < spec.n_designs() {
        return Err(Error::shape(format!("model uses {} designs, got {}", spec.n_designs(), designs.len())));
    }
    for (k, x) in designs.iter().enumerate() {
        if x.nrows() != n {
            return Err(Error::shape(format!("design {k} has {} rows, response {n}", x.nrows())));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("design {k} has non-finite entries")));
        }
    }
    let jmax = designs.iter().map(|x| x.ncols()).max().unwrap_or(0);
    if n < jmax + 1 {
        return Err(Error::invalid(format!("need at least {} rows for {} features, got {n}", jmax + 1, jmax)));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("response has non-finite entries"));
    }
    Ok(())
}

/// Batch fit on a training window at regularization level `alpha`.
///
/// With `warm`, coefficients of coordinates active in the previous model are
/// reused and newly activated coordinates start from their structural zero
/// (CD) or a moment-based loading (LRA).
pub(crate) fn fit_batch(
    spec: &ModelSpec,
    y: &DMatrix<f64>,
    designs: &[DMatrix<f64>],
    alpha: usize,
    warm: Option<&ModelState>,
) -> Result<ModelState> {
    validate_data(spec, y, designs)?;
    let cfg = &spec.config;
    let n = y.nrows();
    let d = cfg.dim;
    let mask = mask_for(cfg.scale, d, cfg.rank, alpha);
    let rows: Vec<DVector<f64>> = (0..n).map(|i| y.row(i).transpose()).collect();
    let cov = loaded(&sample_covariance(&rows));
    let mean = rows.iter().fold(DVector::zeros(d), |a, r| a + r) / n as f64;

    // constant start values per coordinate
    let mut start: Vec<f64> = Vec::with_capacity(spec.specs.len());
    let cd_full = if cfg.scale == ScaleKind::Cd && alpha > 0 && warm.is_none() {
        Some(super::cd_factor_of_covariance(&cov)?)
    } else {
        None
    };
    for s in &spec.specs {
        start.push(match s.coord {
            Coordinate::Location(i) => mean[i],
            Coordinate::Chol(i, j) => match &cd_full {
                Some(l) => l.get(i, j),
                None if i == j => 1.0 / cov[(i, i)].sqrt(),
                None => 0.0,
            },
            Coordinate::LraDiag(i) => 1.0 / cov[(i, i)],
            Coordinate::LraV(..) => 0.0,
            Coordinate::Dof => NU_PILOT,
        });
    }

    let gamma = cfg.forget;
    let mut coords: Vec<CoordState> = Vec::with_capacity(spec.specs.len());
    let mut theta: Vec<Vec<f64>> = Vec::with_capacity(spec.specs.len());
    let mut eta: Vec<Vec<f64>> = Vec::with_capacity(spec.specs.len());
    for (k, s) in spec.specs.iter().enumerate() {
        let x = &designs[s.design];
        let active = coordinate_active(&mask, s.coord);
        let prev = warm.and_then(|w| w.coords.get(k)).filter(|p| p.active && active);
        let (beta, th, et) = if !active {
            let z = structural_zero(s.coord);
            (DVector::zeros(x.ncols()), vec![z; n], vec![0.0; n])
        } else if let Some(p) = prev {
            let et: Vec<f64> = (x * &p.beta).iter().copied().collect();
            let th = et.iter().map(|e| s.link.inverse(*e)).collect();
            (p.beta.clone(), th, et)
        } else {
            let t0 = if warm.is_some() && s.coord == Coordinate::Dof {
                NU_START
            } else {
                start[k]
            };
            let e0 = s.link.eval(t0)?;
            (constant_beta(x, e0, s.intercept), vec![t0; n], vec![e0; n])
        };
        coords.push(CoordState {
            spec: s.clone(),
            active,
            gram: GramianState::new(x.ncols(), gamma)?,
            beta,
            path: prev.and_then(|p| p.path.clone()),
            lambdas: vec![],
            selected: 0,
            ll_path: vec![],
            skipped_rows: 0,
        });
        theta.push(th);
        eta.push(et);
    }

    let disc: Vec<f64> = (0..n).map(|i| (1.0 - gamma).powi((n - 1 - i) as i32)).collect();
    let mut engine = Engine {
        spec,
        coords,
        base: None,
        y: rows,
        designs: designs.to_vec(),
        theta,
        eta,
        disc,
        ll_total: 0.0,
        reset_nu: warm.is_none() && cfg.family == Family::StudentT,
        diag: FitDiagnostics::default(),
        skipped_coordinates: 0,
    };

    if cfg.scale == ScaleKind::Lra && alpha > 0 {
        init_new_loadings(&mut engine, &mask, warm.map(|w| &w.mask))?;
    }

    engine.run(warm.is_none())?;
    let last = engine.row_params(n - 1)?;
    Ok(ModelState {
        version: SNAPSHOT_VERSION,
        spec: spec.clone(),
        mask,
        coords: engine.coords,
        last_params: Some(last),
        loglik: engine.ll_total,
        n_seen: n as u64,
        diagnostics: engine.diag,
    })
}

/// Moment-based start for loading columns that are active now but were not before.
///
/// At `V = 0` every loading derivative vanishes, so a zero start never moves.
fn init_new_loadings(engine: &mut Engine, mask: &RegularizationMask, prev: Option<&RegularizationMask>) -> Result<()> {
    let cfg = &engine.spec.config;
    let d = cfg.dim;
    let n = engine.n_rows();
    let prev_cols = prev.map_or(0, |m| m.alpha.min(m.rank));
    let new_cols: Vec<usize> = (prev_cols..mask.alpha.min(cfg.rank)).collect();
    if new_cols.is_empty() {
        return Ok(());
    }
    // residual precision target from current location fits
    let loc_idx: Vec<usize> = (0..d)
        .map(|i| engine.coords.iter().position(|c| c.spec.coord == Coordinate::Location(i)).expect("location"))
        .collect();
    let resid: Vec<DVector<f64>> = (0..n)
        .map(|row| DVector::from_fn(d, |i, _| engine.y[row][i] - engine.theta[loc_idx[i]][row]))
        .collect();
    let target = scale_param::covariance_from_precision(&loaded(&sample_covariance(&resid)))?;
    for &col in &new_cols {
        // current precision at the average fitted values
        let avg: Vec<f64> = engine.theta.iter().map(|t| t.iter().sum::<f64>() / n as f64).collect();
        let current = assemble(cfg, &engine.coords, &avg)?.scale.precision();
        let v = eigen_loading(&target, &current);
        for i in 0..d {
            let ci = engine.coords.iter().position(|c| c.spec.coord == Coordinate::LraV(i, col)).expect("loading");
            let s = engine.coords[ci].spec.clone();
            let e0 = s.link.eval(v[i])?;
            engine.coords[ci].beta = constant_beta(&engine.designs[s.design], e0, s.intercept);
            engine.theta[ci] = vec![s.link.inverse(e0); n];
            engine.eta[ci] = vec![e0; n];
        }
    }
    Ok(())
}

impl ModelState {
    /// Batch fit at a fixed regularization level.
    pub fn fit_initial(spec: &ModelSpec, y: &DMatrix<f64>, designs: &[DMatrix<f64>], alpha: usize) -> Result<ModelState> {
        fit_batch(spec, y, designs, alpha, None)
    }

    /// Batch refit at the current regularization level, starting from the
    /// current coefficients.
    pub fn refit(&self, y: &DMatrix<f64>, designs: &[DMatrix<f64>]) -> Result<ModelState> {
        fit_batch(&self.spec, y, designs, self.alpha(), Some(self))
    }

    /// Absorbs one new observation. On error the state is left unchanged.
    pub fn update_one(&mut self, y_new: &DVector<f64>, rows: &[DVector<f64>]) -> Result<UpdateReport> {
        check_rows(&self.spec, rows)?;
        if y_new.len() != self.spec.config.dim {
            return Err(Error::shape(format!("observation has {} entries, expected {}", y_new.len(), self.spec.config.dim)));
        }
        for s in &self.spec.specs {
            if rows[s.design].len() != self.coords.iter().find(|c| c.spec.coord == s.coord).map_or(0, |c| c.beta.len()) {
                return Err(Error::shape(format!("design {} row has wrong length", s.design)));
            }
        }
        let finite = y_new.iter().all(|v| v.is_finite()) && rows.iter().all(|r| r.iter().all(|v| v.is_finite()));
        if !finite {
            self.diagnostics.skipped_updates += 1;
            return Ok(UpdateReport {
                outer_iterations: 0,
                inner_iterations: 0,
                converged: false,
                skipped_coordinates: 0,
                skipped: true,
            });
        }

        let theta: Vec<Vec<f64>> = self
            .coords
            .iter()
            .map(|c| {
                if c.active {
                    vec![c.spec.link.inverse(rows[c.spec.design].dot(&c.beta))]
                } else {
                    vec![structural_zero(c.spec.coord)]
                }
            })
            .collect();
        let eta: Vec<Vec<f64>> = self
            .coords
            .iter()
            .map(|c| if c.active { vec![rows[c.spec.design].dot(&c.beta)] } else { vec![0.0] })
            .collect();
        let designs: Vec<DMatrix<f64>> = rows.iter().map(|r| DMatrix::from_row_slice(1, r.len(), r.as_slice())).collect();
        let base = self.coords.iter().map(|c| (c.gram.clone(), c.ll_path.clone())).collect();

        let mut engine = Engine {
            spec: &self.spec,
            coords: self.coords.clone(),
            base: Some(base),
            y: vec![y_new.clone()],
            designs,
            theta,
            eta,
            disc: vec![1.0],
            ll_total: 0.0,
            reset_nu: false,
            diag: FitDiagnostics::default(),
            skipped_coordinates: 0,
        };
        engine.run(false)?;
        let last = engine.row_params(0)?;
        let report = UpdateReport {
            outer_iterations: engine.diag.outer_iterations,
            inner_iterations: engine.diag.inner_iterations,
            converged: engine.diag.converged,
            skipped_coordinates: engine.skipped_coordinates,
            skipped: false,
        };
        let coords = engine.coords;
        let halvings = engine.diag.halvings;
        self.coords = coords;
        self.last_params = Some(last);
        self.n_seen += 1;
        self.diagnostics.updates += 1;
        self.diagnostics.halvings += halvings;
        Ok(report)
    }
}
