//! The day-by-day online study.
//!
//! For every model: fit on the training window, then for each test day build
//! the design rows from information available the day before, draw the
//! ensemble, reveal the day's prices and update. Every data access goes
//! through an [`AuditedFrame`].

use std::time::Instant;

use chrono::NaiveDate;
use mvdr::exec::{self, ExecMode};
use mvdr::scoring::{self, DayScores, DmVariance, ScoreRule};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::audit::{AuditSummary, AuditedFrame, DayAccess};
use crate::config::StudyConfig;
use crate::error::{Result, StudyError};
use crate::features::{build_features, raw_rows, training_set, DesignDay, DesignLayout, Standardizer, FIRST_DAY};
use crate::frame::MarketFrame;
use crate::zoo::{stream_seed, Forecaster, ModelKind, ModelSettings};

/// Wall-clock cost of the initial fit and of every online update, in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub initial_fit: f64,
    pub updates: Vec<f64>,
}

impl Timing {
    pub fn avg_update(&self) -> f64 {
        self.updates.iter().sum::<f64>() / self.updates.len().max(1) as f64
    }

    pub fn std_update(&self) -> f64 {
        let n = self.updates.len();
        if n < 2 {
            return 0.0;
        }
        let m = self.avg_update();
        (self.updates.iter().map(|u| (u - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    }

    pub fn total(&self) -> f64 {
        self.initial_fit + self.updates.iter().sum::<f64>()
    }

    /// What refitting from scratch every day would cost relative to the online run:
    /// `initial fit × T / total time`.
    pub fn speedup(&self) -> f64 {
        self.initial_fit * self.updates.len() as f64 / self.total()
    }

    /// Mean update time of the last decile of days over that of the first.
    pub fn decile_ratio(&self) -> f64 {
        let n = self.updates.len();
        let k = (n / 10).max(1);
        let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
        mean(&self.updates[n - k..]) / mean(&self.updates[..k])
    }
}

/// Everything recorded for one model that completed the study.
#[derive(Debug, Clone)]
pub struct ModelRun {
    pub kind: ModelKind,
    pub timing: Timing,
    pub scores: Vec<DayScores>,
    /// Per-day log score.
    pub ls: Vec<f64>,
    pub audit: AuditSummary,
    pub model: Forecaster,
}

impl ModelRun {
    pub fn name(&self) -> String {
        self.kind.name()
    }

    /// Per-day values of a rule. RMSE and MAE use the per-day mean squared
    /// and mean absolute error.
    pub fn series(&self, rule: ScoreRule, dim: usize) -> Vec<f64> {
        let d = dim as f64;
        match rule {
            ScoreRule::Rmse => self.scores.iter().map(|s| s.sse / d).collect(),
            ScoreRule::Mae => self.scores.iter().map(|s| s.sae / d).collect(),
            ScoreRule::Crps => self.scores.iter().map(|s| s.crps).collect(),
            ScoreRule::Es => self.scores.iter().map(|s| s.es).collect(),
            ScoreRule::Vs05 => self.scores.iter().map(|s| s.vs05).collect(),
            ScoreRule::Vs1 => self.scores.iter().map(|s| s.vs1).collect(),
            ScoreRule::Dss => self.scores.iter().map(|s| s.dss).collect(),
            ScoreRule::Ls => self.ls.clone(),
        }
    }

    /// Aggregate of a rule over the test period.
    pub fn aggregate(&self, rule: ScoreRule, dim: usize) -> f64 {
        let s = self.series(rule, dim);
        let mean = s.iter().sum::<f64>() / s.len() as f64;
        if rule == ScoreRule::Rmse {
            mean.sqrt()
        } else {
            mean
        }
    }
}

/// A model dropped from the reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Quarantined {
    pub model: String,
    pub stage: String,
    pub day: Option<usize>,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct StudyReport {
    pub dim: usize,
    pub first_test: usize,
    pub test_dates: Vec<NaiveDate>,
    pub runs: Vec<ModelRun>,
    pub quarantined: Vec<Quarantined>,
    pub standardizer: Standardizer,
    /// Reads made while freezing the standardization.
    pub setup_audit: AuditSummary,
}

impl StudyReport {
    pub fn run(&self, name: &str) -> Option<&ModelRun> {
        let kind: ModelKind = name.parse().ok()?;
        self.runs.iter().find(|r| r.kind == kind)
    }

    pub fn names(&self) -> Vec<String> {
        self.runs.iter().map(ModelRun::name).collect()
    }

    /// DM p-values, entry (i, j) for "model j beats model i".
    pub fn dm_matrix(&self, rule: ScoreRule, variance: DmVariance) -> Result<DMatrix<f64>> {
        let series: Vec<Vec<f64>> = self.runs.iter().map(|r| r.series(rule, self.dim)).collect();
        let refs: Vec<&[f64]> = series.iter().map(Vec::as_slice).collect();
        Ok(scoring::dm_matrix(&refs, variance)?)
    }

    pub fn total_violations(&self) -> usize {
        self.setup_audit.violations.len() + self.runs.iter().map(|r| r.audit.violations.len()).sum::<usize>()
    }
}

/// Loads the data named by the configuration and runs the study.
pub fn run_study(cfg: &StudyConfig) -> Result<StudyReport> {
    let frame = cfg.load_frame()?;
    run_on_frame(cfg, &frame)
}

/// Freezes the feature standardization on the training window.
pub fn fit_standardizer(frame: &MarketFrame, first_test: usize) -> Result<(Standardizer, AuditSummary)> {
    let guard = AuditedFrame::new(frame, first_test - 1);
    let raw = raw_rows(&guard, FIRST_DAY..first_test)?;
    let std = Standardizer::fit(&DesignLayout::new(frame.dim()), &raw)?;
    Ok((std, guard.summary()))
}

/// Standardized rows for target day `t`.
pub fn design_day<A: DayAccess + ?Sized>(src: &A, std: &Standardizer, t: usize) -> Result<DesignDay> {
    let mut rows = build_features(src, t)?;
    std.apply(&mut rows);
    Ok(rows)
}

fn name_hash(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// Ensemble seed of a model on a day.
pub fn ensemble_seed(seed: u64, kind: &ModelKind, day: usize) -> u64 {
    stream_seed(seed, name_hash(&kind.name()), day as u64)
}

pub fn run_on_frame(cfg: &StudyConfig, frame: &MarketFrame) -> Result<StudyReport> {
    frame.validate()?;
    let (first_test, n_test) = cfg.split(frame)?;
    let models = cfg.model_list()?;
    let (std, setup_audit) = fit_standardizer(frame, first_test)?;
    log::info!(
        "study: D={}, training days {}..{}, {} test days, {} models",
        frame.dim(),
        FIRST_DAY,
        first_test,
        n_test,
        models.len()
    );

    let job = |(kind, settings): &(ModelKind, ModelSettings)| {
        run_model(cfg, frame, &std, *kind, settings.clone(), first_test, n_test)
    };
    let outcomes: Vec<std::result::Result<ModelRun, Quarantined>> = par_map(cfg.exec, &models, job);

    let mut runs = Vec::new();
    let mut quarantined = Vec::new();
    for o in outcomes {
        match o {
            Ok(r) => runs.push(r),
            Err(q) => {
                log::warn!("{} quarantined at {} (day {:?}): {}", q.model, q.stage, q.day, q.reason);
                quarantined.push(q);
            }
        }
    }
    Ok(StudyReport {
        dim: frame.dim(),
        first_test,
        test_dates: frame.dates[first_test..first_test + n_test].to_vec(),
        runs,
        quarantined,
        standardizer: std,
        setup_audit,
    })
}

fn par_map<T: Sync, U: Send>(mode: ExecMode, items: &[T], f: impl Fn(&T) -> U + Sync + Send) -> Vec<U> {
    #[cfg(feature = "parallel")]
    {
        if mode.is_parallel() {
            use rayon::prelude::*;
            return items.par_iter().map(f).collect();
        }
    }
    let _ = mode;
    items.iter().map(f).collect()
}

fn quarantine(kind: &ModelKind, stage: &str, day: Option<usize>, e: impl std::fmt::Display) -> Quarantined {
    Quarantined { model: kind.name(), stage: stage.into(), day, reason: e.to_string() }
}

/// Runs one model through the protocol.
pub fn run_model(
    cfg: &StudyConfig,
    frame: &MarketFrame,
    std: &Standardizer,
    kind: ModelKind,
    settings: ModelSettings,
    first_test: usize,
    n_test: usize,
) -> std::result::Result<ModelRun, Quarantined> {
    let guard = AuditedFrame::new(frame, first_test - 1);
    let m = settings.ensemble.unwrap_or(cfg.ensemble);
    let mut model = Forecaster::new(kind, settings, frame.dim());

    let train = training_set(&guard, std, FIRST_DAY..first_test).map_err(|e| quarantine(&kind, "features", None, e))?;
    let t0 = Instant::now();
    model.fit(&train).map_err(|e| quarantine(&kind, "fit", None, e))?;
    let initial_fit = t0.elapsed().as_secs_f64();
    drop(train);
    log::info!("{}: initial fit {:.3}s", kind, initial_fit);

    let mut updates = Vec::with_capacity(n_test);
    let mut ensembles = Vec::with_capacity(n_test);
    let mut observed = Vec::with_capacity(n_test);
    let mut ls = Vec::with_capacity(n_test);
    for t in first_test..first_test + n_test {
        guard.set_now(t - 1);
        let rows = design_day(&guard, std, t).map_err(|e| quarantine(&kind, "features", Some(t), e))?;
        let pred = model
            .predict(&rows, m, ensemble_seed(cfg.seed, &kind, t))
            .map_err(|e| quarantine(&kind, "predict", Some(t), e))?;

        guard.set_now(t);
        let y = guard.prices(t);
        ls.push(pred.density.log_score(&y).map_err(|e| quarantine(&kind, "score", Some(t), e))?);

        let t1 = Instant::now();
        model.update(&rows, &y).map_err(|e| quarantine(&kind, "update", Some(t), e))?;
        updates.push(t1.elapsed().as_secs_f64());
        ensembles.push(pred.ensemble);
        observed.push(y);
    }

    let scores = score_days(&observed, &ensembles).map_err(|e| quarantine(&kind, "score", None, e))?;
    Ok(ModelRun { kind, timing: Timing { initial_fit, updates }, scores, ls, audit: guard.summary(), model })
}

/// Ensemble scores of every day, computed in parallel across days.
pub fn score_days(observed: &[DVector<f64>], ensembles: &[DMatrix<f64>]) -> Result<Vec<DayScores>> {
    let mode = ExecMode::Parallel;
    exec::map_indexed(mode, observed.len(), |i| scoring::day_scores(&observed[i], &ensembles[i]))
        .into_iter()
        .map(|r| r.map_err(StudyError::from))
        .collect()
}

/// Models fitted on the training window, ready to be stored and advanced day by day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotSet {
    pub version: u32,
    pub seed: u64,
    pub standardizer: Standardizer,
    /// Last day whose prices have been absorbed.
    pub last_day: usize,
    pub last_date: NaiveDate,
    pub models: Vec<Forecaster>,
}

/// Fits every configured model on the training window.
pub fn fit_models(cfg: &StudyConfig, frame: &MarketFrame) -> Result<SnapshotSet> {
    frame.validate()?;
    let (first_test, _) = cfg.split(frame)?;
    let (std, _) = fit_standardizer(frame, first_test)?;
    let guard = AuditedFrame::new(frame, first_test - 1);
    let train = training_set(&guard, &std, FIRST_DAY..first_test)?;
    let models = cfg
        .model_list()?
        .into_iter()
        .map(|(kind, settings)| {
            let mut f = Forecaster::new(kind, settings, frame.dim());
            f.fit(&train).map_err(|e| StudyError::Model { model: kind.name(), reason: e.to_string() })?;
            Ok(f)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SnapshotSet {
        version: mvdr::estimator::SNAPSHOT_VERSION,
        seed: cfg.seed,
        standardizer: std,
        last_day: first_test - 1,
        last_date: frame.dates[first_test - 1],
        models,
    })
}

impl SnapshotSet {
    /// Absorbs every day after the last stored one up to `until` (inclusive).
    pub fn advance(&mut self, frame: &MarketFrame, until: usize) -> Result<usize> {
        if until >= frame.n_days() {
            return Err(StudyError::Config(format!("day {until} beyond the {} available days", frame.n_days())));
        }
        let guard = AuditedFrame::new(frame, self.last_day);
        let mut n = 0;
        for t in self.last_day + 1..=until {
            guard.set_now(t);
            let rows = design_day(&guard, &self.standardizer, t)?;
            let y = guard.prices(t);
            for m in &mut self.models {
                m.update(&rows, &y).map_err(|e| StudyError::Model { model: m.name(), reason: e.to_string() })?;
            }
            self.last_day = t;
            self.last_date = frame.dates[t];
            n += 1;
        }
        Ok(n)
    }

    /// Ensembles for the day after the last absorbed one.
    pub fn forecast(&self, frame: &MarketFrame, m: usize) -> Result<Vec<(String, crate::zoo::Prediction)>> {
        let t = self.last_day + 1;
        let guard = AuditedFrame::new(frame, self.last_day);
        let rows = design_day(&guard, &self.standardizer, t)?;
        self.models
            .iter()
            .map(|f| Ok((f.name(), f.predict(&rows, m, ensemble_seed(self.seed, &f.kind, t))?)))
            .collect()
    }
}
