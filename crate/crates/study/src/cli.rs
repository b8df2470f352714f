//! Command-line interface.

use std::path::PathBuf;

use chrono::NaiveDate;
use clap::{Parser, Subcommand};
use mvdr::scoring::{DmVariance, ScoreRule};
use serde_json::{json, Value};

use crate::config::StudyConfig;
use crate::error::{Result, StudyError};
use crate::report;
use crate::runner;
use crate::synth::{synth_generate, Dependence, SynthSpec};

#[derive(Debug, Parser)]
#[command(name = "mvdr", version, about = "Online multivariate distributional regression forecasting study")]
pub struct Cli {
    /// TOML study configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Base seed of the data generator and the ensembles.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Model names separated by ';'.
    #[arg(long, global = true, value_delimiter = ';')]
    pub models: Option<Vec<String>>,
    /// Last day of the initial training window (YYYY-MM-DD).
    #[arg(long, global = true)]
    pub train_end: Option<NaiveDate>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit the models on the training window and store snapshots.
    Fit,
    /// Advance stored snapshots through the given day.
    Update {
        /// Last day to absorb (YYYY-MM-DD).
        #[arg(long)]
        until: NaiveDate,
    },
    /// Ensemble forecasts for the day after the stored snapshots.
    Predict {
        /// Ensemble size, the configured one when unset.
        #[arg(long)]
        ensemble: Option<usize>,
    },
    /// Run the full online study and write all reports.
    Study,
    /// Generate a synthetic market as an hourly CSV plus ground truth.
    Synth {
        #[arg(long, default_value_t = 6)]
        dim: usize,
        #[arg(long, default_value_t = 400)]
        days: usize,
        #[arg(long, default_value = "time-varying-cd")]
        dependence: Dependence,
    },
    /// Recompute the aggregate score table from a study's per-day series.
    Score,
    /// Diebold–Mariano matrix of one rule from a study's per-day series.
    Dm {
        #[arg(long, default_value = "ES")]
        rule: ScoreRule,
        /// HAC variance of the loss differential.
        #[arg(long)]
        newey_west: bool,
    },
}

impl Cli {
    fn study_config(&self) -> Result<StudyConfig> {
        let mut cfg = match &self.config {
            Some(p) => StudyConfig::load(p)?,
            None => StudyConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.out = o.clone();
        }
        if let Some(names) = &self.models {
            let names: Vec<String> = names.iter().map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect();
            if !(names.len() == 1 && names[0].eq_ignore_ascii_case("all")) {
                cfg.select_models(&names)?;
            }
        }
        if let Some(d) = self.train_end {
            cfg.train_end = Some(d);
            cfg.train_days = None;
        }
        Ok(cfg)
    }
}

/// Executes a command and returns a JSON summary for stdout.
pub fn run(cli: &Cli) -> Result<Value> {
    let cfg = cli.study_config()?;
    let out = cfg.out.clone();
    match &cli.command {
        Command::Study => {
            let rep = runner::run_study(&cfg)?;
            let manifest = report::write_report(&rep, &cfg, &out)?;
            Ok(json!({
                "out": out,
                "models": rep.names(),
                "quarantined": manifest.quarantined,
                "test_days": manifest.test_days,
                "audit_violations": manifest.audit_violations,
            }))
        }
        Command::Synth { dim, days, dependence } => {
            let spec = cfg.synth_spec().unwrap_or(SynthSpec { dim: *dim, days: *days, dependence: *dependence, seed: cfg.seed });
            let data = synth_generate(&spec)?;
            std::fs::create_dir_all(&out).map_err(|e| StudyError::io(&out, e))?;
            let csv_path = out.join("synth.csv");
            let file = std::fs::File::create(&csv_path).map_err(|e| StudyError::io(&csv_path, e))?;
            data.frame.write_hourly_csv(std::io::BufWriter::new(file))?;
            let truth_path = out.join("truth.json");
            std::fs::write(&truth_path, serde_json::to_string(&data.truth)?).map_err(|e| StudyError::io(&truth_path, e))?;
            Ok(json!({ "csv": csv_path, "truth": truth_path, "days": spec.days, "dim": spec.dim }))
        }
        Command::Fit => {
            let frame = cfg.load_frame()?;
            let set = runner::fit_models(&cfg, &frame)?;
            let path = report::save_snapshots(&set, &out)?;
            Ok(json!({ "snapshot": path, "last_date": set.last_date, "models": set.models.iter().map(|m| m.name()).collect::<Vec<_>>() }))
        }
        Command::Update { until } => {
            let frame = cfg.load_frame()?;
            let mut set = report::load_snapshots(&out)?;
            let until = frame.index_of(*until).ok_or_else(|| StudyError::Config(format!("{until} outside the data")))?;
            let n = set.advance(&frame, until)?;
            let path = report::save_snapshots(&set, &out)?;
            Ok(json!({ "snapshot": path, "days_absorbed": n, "last_date": set.last_date }))
        }
        Command::Predict { ensemble } => {
            let frame = cfg.load_frame()?;
            let set = report::load_snapshots(&out)?;
            let m = ensemble.unwrap_or(cfg.ensemble);
            let preds = set.forecast(&frame, m)?;
            let dir = out.join("predictions");
            std::fs::create_dir_all(&dir).map_err(|e| StudyError::io(&dir, e))?;
            let target = set.last_day + 1;
            let mut files = Vec::new();
            for (f, (_, p)) in set.models.iter().zip(&preds) {
                let path = dir.join(format!("{}.csv", f.kind.slug()));
                let mut w = csv::Writer::from_path(&path)?;
                w.write_record((0..p.ensemble.ncols()).map(|h| format!("h{h:02}")))?;
                for row in p.ensemble.row_iter() {
                    w.write_record(row.iter().map(|v| v.to_string()))?;
                }
                w.flush().map_err(|e| StudyError::io(&path, e))?;
                let dpath = dir.join(format!("{}.density.json", f.kind.slug()));
                std::fs::write(&dpath, serde_json::to_string(&p.density)?).map_err(|e| StudyError::io(&dpath, e))?;
                files.push(path);
            }
            Ok(json!({ "date": frame.dates[target], "files": files }))
        }
        Command::Score => {
            let series = report::read_series(&out.join("series.csv"))?;
            let table = report::aggregate_series(&series);
            let rows: Vec<Value> = table
                .iter()
                .map(|(n, v)| {
                    let mut o = serde_json::Map::new();
                    o.insert("model".into(), json!(n));
                    for (r, x) in ScoreRule::ALL.iter().zip(v) {
                        o.insert(r.name().into(), json!(x));
                    }
                    Value::Object(o)
                })
                .collect();
            Ok(json!({ "scores": rows }))
        }
        Command::Dm { rule, newey_west } => {
            let series = report::read_series(&out.join("series.csv"))?;
            let variance = if *newey_west { DmVariance::NeweyWest } else { DmVariance::Sample };
            let m = report::dm_from_series(&series, *rule, variance)?;
            let names: Vec<String> = series.iter().map(|(n, _)| n.clone()).collect();
            let path = out.join(format!("dm_{}_recomputed.csv", report::rule_slug(*rule)));
            std::fs::write(&path, report::dm_csv(&names, &m)?).map_err(|e| StudyError::io(&path, e))?;
            Ok(json!({ "rule": rule.name(), "file": path }))
        }
    }
}

/// Machine-readable error report.
pub fn error_report(e: &StudyError) -> Value {
    json!({ "error": e.kind(), "message": e.to_string() })
}
