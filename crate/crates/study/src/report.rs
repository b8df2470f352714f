//! Score tables, DM matrices, timing, manifest, plots and snapshots on disk.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use mvdr::scoring::{DmVariance, ScoreRule};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::StudyConfig;
use crate::error::{Result, StudyError};
use crate::runner::{SnapshotSet, StudyReport};

/// Rules plotted over time.
pub const PLOTTED_RULES: [ScoreRule; 4] = [ScoreRule::Crps, ScoreRule::Es, ScoreRule::Dss, ScoreRule::Ls];

fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        v.to_string()
    } else {
        String::new()
    }
}

fn create_dir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).map_err(|e| StudyError::io(p, e))
}

fn write_file(p: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(p, bytes).map_err(|e| StudyError::io(p, e))
}

/// Aggregate scores, one row per model.
pub fn score_table_csv(report: &StudyReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["model".to_string()];
    header.extend(ScoreRule::ALL.iter().map(|r| r.name().to_string()));
    w.write_record(&header)?;
    for run in &report.runs {
        let mut rec = vec![run.name()];
        rec.extend(ScoreRule::ALL.iter().map(|r| fmt_f64(run.aggregate(*r, report.dim))));
        w.write_record(&rec)?;
    }
    finish(w)
}

/// Per-day scores in long format.
pub fn series_csv(report: &StudyReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["day".to_string(), "date".to_string(), "model".to_string()];
    header.extend(ScoreRule::ALL.iter().map(|r| series_column(*r).to_string()));
    w.write_record(&header)?;
    for run in &report.runs {
        let cols: Vec<Vec<f64>> = ScoreRule::ALL.iter().map(|r| run.series(*r, report.dim)).collect();
        for (k, date) in report.test_dates.iter().enumerate() {
            let mut rec = vec![(report.first_test + k).to_string(), date.to_string(), run.name()];
            rec.extend(cols.iter().map(|c| fmt_f64(c[k])));
            w.write_record(&rec)?;
        }
    }
    finish(w)
}

/// Column name of a rule's per-day series.
pub fn series_column(rule: ScoreRule) -> &'static str {
    match rule {
        ScoreRule::Rmse => "SE",
        ScoreRule::Mae => "AE",
        r => r.name(),
    }
}

/// Square matrix with model names on both axes.
pub fn dm_csv(names: &[String], m: &DMatrix<f64>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["model".to_string()];
    header.extend(names.iter().cloned());
    w.write_record(&header)?;
    for (i, n) in names.iter().enumerate() {
        let mut rec = vec![n.clone()];
        rec.extend((0..names.len()).map(|j| fmt_f64(m[(i, j)])));
        w.write_record(&rec)?;
    }
    finish(w)
}

pub fn timing_csv(report: &StudyReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["model", "initial_fit_s", "avg_update_s", "std_update_s", "total_s", "speedup", "decile_ratio"])?;
    for run in &report.runs {
        let t = &run.timing;
        w.write_record([
            run.name(),
            format!("{:.6}", t.initial_fit),
            format!("{:.6}", t.avg_update()),
            format!("{:.6}", t.std_update()),
            format!("{:.6}", t.total()),
            format!("{:.2}", t.speedup()),
            format!("{:.3}", t.decile_ratio()),
        ])?;
    }
    finish(w)
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| StudyError::Config(format!("csv buffer: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub seed: u64,
    pub config: StudyConfig,
    pub first_test: usize,
    pub test_days: usize,
    pub files: Vec<String>,
    pub models: serde_json::Value,
    pub quarantined: serde_json::Value,
    pub audit_violations: usize,
}

/// Writes every report artifact below `out` and returns the manifest.
pub fn write_report(report: &StudyReport, cfg: &StudyConfig, out: &Path) -> Result<Manifest> {
    create_dir(out)?;
    let mut files = Vec::new();
    let mut put = |name: String, content: String| -> Result<()> {
        write_file(&out.join(&name), content)?;
        files.push(name);
        Ok(())
    };
    put("scores.csv".into(), score_table_csv(report)?)?;
    put("series.csv".into(), series_csv(report)?)?;
    put("timing.csv".into(), timing_csv(report)?)?;
    let names = report.names();
    let mut dms = Vec::new();
    if report.runs.len() >= 2 && report.test_dates.len() >= mvdr::scoring::DM_MIN_LEN {
        for rule in ScoreRule::ALL {
            let m = report.dm_matrix(rule, cfg.dm_variance)?;
            put(format!("dm_{}.csv", rule_slug(rule)), dm_csv(&names, &m)?)?;
            dms.push((rule, m));
        }
    } else {
        log::warn!("DM matrices skipped: need 2 models and {} test days", mvdr::scoring::DM_MIN_LEN);
    }
    if cfg.plots {
        create_dir(&out.join("plots"))?;
        for rule in PLOTTED_RULES {
            put(format!("plots/scores_{}.svg", rule_slug(rule)), score_plot_svg(report, rule))?;
        }
        for (rule, m) in &dms {
            put(format!("plots/dm_{}.svg", rule_slug(*rule)), dm_heatmap_svg(&names, m, rule.name()))?;
        }
    }

    let models = json!(report
        .runs
        .iter()
        .map(|r| json!({
            "name": r.name(),
            "timing": {
                "initial_fit_s": r.timing.initial_fit,
                "avg_update_s": r.timing.avg_update(),
                "std_update_s": r.timing.std_update(),
                "total_s": r.timing.total(),
                "speedup": r.timing.speedup(),
            },
            "audit": { "reads": r.audit.reads, "violations": r.audit.violations.len() },
            "diagnostics": r.model.diagnostics(),
        }))
        .collect::<Vec<_>>());
    if cfg.snapshots {
        create_dir(&out.join("snapshots"))?;
        for r in &report.runs {
            let name = format!("snapshots/{}.json", r.kind.slug());
            put(name, serde_json::to_string(&r.model)?)?;
        }
    }
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: cfg.seed,
        config: cfg.clone(),
        first_test: report.first_test,
        test_days: report.test_dates.len(),
        files: files.clone(),
        models,
        quarantined: serde_json::to_value(&report.quarantined)?,
        audit_violations: report.total_violations(),
    };
    write_file(&out.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

pub fn rule_slug(rule: ScoreRule) -> String {
    rule.name().to_ascii_lowercase().replace('.', "")
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

const PALETTE: [&str; 10] =
    ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"];

/// Running mean of a rule over the test period, one line per model.
pub fn score_plot_svg(report: &StudyReport, rule: ScoreRule) -> String {
    let (w, h, left, right, top, bottom) = (900.0, 500.0, 70.0, 260.0, 30.0, 40.0);
    let lines: Vec<(String, Vec<f64>)> = report
        .runs
        .iter()
        .map(|r| {
            let s = r.series(rule, report.dim);
            let mut acc = 0.0;
            let cm = s.iter().enumerate().map(|(k, v)| {
                acc += v;
                acc / (k + 1) as f64
            });
            (r.name(), cm.collect())
        })
        .collect();
    let all = lines.iter().flat_map(|(_, v)| v.iter().copied()).filter(|v| v.is_finite());
    let (lo, hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let (lo, hi) = if lo < hi { (lo, hi) } else { (lo - 1.0, lo + 1.0) };
    let n = report.test_dates.len().max(2);
    let px = |k: usize| left + (w - left - right) * k as f64 / (n - 1) as f64;
    let py = |v: f64| top + (h - top - bottom) * (hi - v) / (hi - lo);

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{left}" y="18">Running mean {} over test days</text>"#, esc(rule.name()));
    let _ = writeln!(
        s,
        r#"<line x1="{left}" y1="{}" x2="{}" y2="{}" stroke="black"/><line x1="{left}" y1="{top}" x2="{left}" y2="{}" stroke="black"/>"#,
        h - bottom,
        w - right,
        h - bottom,
        h - bottom
    );
    for frac in [0.0, 0.5, 1.0] {
        let v = lo + frac * (hi - lo);
        let _ = writeln!(s, r#"<text x="4" y="{:.1}">{:.4}</text>"#, py(v) + 4.0, v);
    }
    if let (Some(a), Some(b)) = (report.test_dates.first(), report.test_dates.last()) {
        let _ = writeln!(s, r#"<text x="{left}" y="{}">{a}</text>"#, h - 20.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{b}</text>"#, w - right, h - 20.0);
    }
    for (i, (name, v)) in lines.iter().enumerate() {
        let colour = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = v.iter().enumerate().filter(|(_, y)| y.is_finite()).map(|(k, y)| format!("{:.1},{:.1}", px(k), py(*y))).collect();
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{colour}" stroke-width="1.5" points="{}"/>"#, pts.join(" "));
        let ly = top + 16.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<rect x="{}" y="{:.1}" width="12" height="3" fill="{colour}"/><text x="{}" y="{:.1}">{}</text>"#,
            w - right + 10.0,
            ly,
            w - right + 28.0,
            ly + 5.0,
            esc(name)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// DM p-value heatmap: green where the column model is significantly better.
pub fn dm_heatmap_svg(names: &[String], m: &DMatrix<f64>, title: &str) -> String {
    let k = names.len();
    let cell = 36.0;
    let label = 220.0;
    let size = label + cell * k as f64 + 20.0;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="10" y="16">DM p-values ({}), column better than row</text>"#, esc(title));
    for (i, n) in names.iter().enumerate() {
        let y = label + cell * i as f64 + cell * 0.6;
        let _ = writeln!(s, r#"<text x="{}" y="{y:.1}" text-anchor="end">{}</text>"#, label - 6.0, esc(n));
        let x = label + cell * i as f64 + cell * 0.6;
        let _ = writeln!(
            s,
            r#"<text x="{x:.1}" y="{}" text-anchor="end" transform="rotate(-60 {x:.1} {})">{}</text>"#,
            label - 6.0,
            label - 6.0,
            esc(n)
        );
    }
    for i in 0..k {
        for j in 0..k {
            let p = m[(i, j)];
            let fill = if !p.is_finite() {
                "#000000".to_string()
            } else {
                // green for small p, through yellow, to red at p ≥ 0.1
                let t = (p / 0.1).clamp(0.0, 1.0);
                let r = (255.0 * t.min(0.5) * 2.0) as u8;
                let g = (255.0 * (1.0 - (t - 0.5).max(0.0) * 2.0)) as u8;
                format!("#{r:02x}{g:02x}40")
            };
            let _ = writeln!(
                s,
                r#"<rect x="{:.1}" y="{:.1}" width="{cell}" height="{cell}" fill="{fill}" stroke="white"/>"#,
                label + cell * j as f64,
                label + cell * i as f64
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

const SNAPSHOT_FILE: &str = "snapshot.json";

pub fn snapshot_path(dir: &Path) -> PathBuf {
    dir.join(SNAPSHOT_FILE)
}

pub fn save_snapshots(set: &SnapshotSet, dir: &Path) -> Result<PathBuf> {
    create_dir(dir)?;
    let p = snapshot_path(dir);
    write_file(&p, serde_json::to_string(set)?)?;
    Ok(p)
}

pub fn load_snapshots(dir: &Path) -> Result<SnapshotSet> {
    let p = snapshot_path(dir);
    let text = std::fs::read_to_string(&p).map_err(|e| StudyError::io(&p, e))?;
    let set: SnapshotSet = serde_json::from_str(&text)?;
    if set.version != mvdr::estimator::SNAPSHOT_VERSION {
        return Err(StudyError::Config(format!(
            "snapshot version {} does not match {}",
            set.version,
            mvdr::estimator::SNAPSHOT_VERSION
        )));
    }
    Ok(set)
}

/// Per-day series read back from `series.csv`, grouped by model in file order.
pub fn read_series(path: &Path) -> Result<Vec<(String, Vec<Vec<f64>>)>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let headers = rdr.headers()?.clone();
    let cols: Vec<usize> = ScoreRule::ALL
        .iter()
        .map(|r| {
            headers
                .iter()
                .position(|h| h == series_column(*r))
                .ok_or_else(|| StudyError::Rejected(vec![format!("series file lacks column {}", series_column(*r))]))
        })
        .collect::<Result<_>>()?;
    let model_col = headers.iter().position(|h| h == "model").ok_or_else(|| StudyError::Rejected(vec!["series file lacks column model".into()]))?;
    let mut out: Vec<(String, Vec<Vec<f64>>)> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let name = rec.get(model_col).unwrap_or("").to_string();
        let vals: Vec<f64> = cols
            .iter()
            .map(|&c| rec.get(c).unwrap_or("").parse::<f64>().unwrap_or(f64::NAN))
            .collect();
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(StudyError::Rejected(vec![format!("series row {}: non-numeric score", i + 2)]));
        }
        match out.iter_mut().find(|(n, _)| *n == name) {
            Some((_, rows)) => rows.push(vals),
            None => out.push((name, vec![vals])),
        }
    }
    Ok(out)
}

/// Aggregate table recomputed from per-day series.
pub fn aggregate_series(series: &[(String, Vec<Vec<f64>>)]) -> Vec<(String, Vec<f64>)> {
    series
        .iter()
        .map(|(name, rows)| {
            let n = rows.len() as f64;
            let agg = ScoreRule::ALL
                .iter()
                .enumerate()
                .map(|(k, r)| {
                    let mean = rows.iter().map(|v| v[k]).sum::<f64>() / n;
                    if *r == ScoreRule::Rmse {
                        mean.sqrt()
                    } else {
                        mean
                    }
                })
                .collect();
            (name.clone(), agg)
        })
        .collect()
}

/// DM matrix of one rule from per-day series.
pub fn dm_from_series(series: &[(String, Vec<Vec<f64>>)], rule: ScoreRule, variance: DmVariance) -> Result<DMatrix<f64>> {
    let k = ScoreRule::ALL.iter().position(|r| *r == rule).expect("rule is listed");
    let cols: Vec<Vec<f64>> = series.iter().map(|(_, rows)| rows.iter().map(|v| v[k]).collect()).collect();
    let refs: Vec<&[f64]> = cols.iter().map(Vec::as_slice).collect();
    Ok(mvdr::scoring::dm_matrix(&refs, variance)?)
}
