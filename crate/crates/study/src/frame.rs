//! Daily market data and hourly CSV ingestion.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{Datelike, NaiveDate, NaiveDateTime, Timelike};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, StudyError};

/// Hours per delivery day on the day-ahead market.
pub const MARKET_DIM: usize = 24;
/// Clock hour that is skipped or repeated on daylight-saving switch days.
pub const DST_HOUR: usize = 2;
/// Minimum number of days: seven lag days plus one target.
pub const MIN_DAYS: usize = 8;

const COLUMNS: [&str; 8] = ["timestamp", "price", "res", "load", "eua", "gas", "coal", "oil"];
const TIMESTAMP_FORMATS: [&str; 4] = ["%Y-%m-%d %H:%M:%S", "%Y-%m-%d %H:%M", "%Y-%m-%dT%H:%M:%S", "%Y-%m-%dT%H:%M"];

/// Prices and fundamentals, one row per day and one column per delivery hour.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketFrame {
    pub dates: Vec<NaiveDate>,
    pub prices: DMatrix<f64>,
    pub res: DMatrix<f64>,
    pub load: DMatrix<f64>,
    pub eua: Vec<f64>,
    pub gas: Vec<f64>,
    pub coal: Vec<f64>,
    pub oil: Vec<f64>,
}

impl MarketFrame {
    /// Checks shapes, finiteness and calendar continuity.
    pub fn validate(&self) -> Result<()> {
        let t = self.dates.len();
        let d = self.prices.ncols();
        let mut problems = Vec::new();
        if d == 0 {
            problems.push("frame has no hours".to_string());
        }
        for (name, m) in [("price", &self.prices), ("res", &self.res), ("load", &self.load)] {
            if m.nrows() != t || m.ncols() != d {
                problems.push(format!("{name} is {}x{}, expected {t}x{d}", m.nrows(), m.ncols()));
            }
        }
        for (name, v) in [("eua", &self.eua), ("gas", &self.gas), ("coal", &self.coal), ("oil", &self.oil)] {
            if v.len() != t {
                problems.push(format!("{name} has {} days, expected {t}", v.len()));
            }
        }
        if !problems.is_empty() {
            return Err(StudyError::Rejected(problems));
        }
        for day in 0..t {
            let finite = (0..d).all(|h| {
                self.prices[(day, h)].is_finite() && self.res[(day, h)].is_finite() && self.load[(day, h)].is_finite()
            }) && self.fuels(day).iter().all(|v| v.is_finite());
            if !finite {
                problems.push(format!("{}: non-finite value", self.dates[day]));
            }
            if day > 0 && self.dates[day].signed_duration_since(self.dates[day - 1]).num_days() != 1 {
                problems.push(format!("gap between {} and {}", self.dates[day - 1], self.dates[day]));
            }
        }
        if !problems.is_empty() {
            return Err(StudyError::Rejected(problems));
        }
        if t < MIN_DAYS {
            return Err(StudyError::History(format!("{t} days, need at least {MIN_DAYS}")));
        }
        Ok(())
    }

    pub fn n_days(&self) -> usize {
        self.dates.len()
    }

    pub fn dim(&self) -> usize {
        self.prices.ncols()
    }

    pub fn price_row(&self, day: usize) -> DVector<f64> {
        self.prices.row(day).transpose()
    }

    /// Daily EUA, gas, coal and oil prices.
    pub fn fuels(&self, day: usize) -> [f64; 4] {
        [self.eua[day], self.gas[day], self.coal[day], self.oil[day]]
    }

    pub fn load_base(&self, day: usize) -> f64 {
        self.load.row(day).mean()
    }

    pub fn res_base(&self, day: usize) -> f64 {
        self.res.row(day).mean()
    }

    /// 0 = Monday, …, 6 = Sunday.
    pub fn weekday(&self, day: usize) -> usize {
        self.dates[day].weekday().num_days_from_monday() as usize
    }

    /// Index of a calendar date.
    pub fn index_of(&self, date: NaiveDate) -> Option<usize> {
        let first = *self.dates.first()?;
        let k = date.signed_duration_since(first).num_days();
        (k >= 0 && (k as usize) < self.dates.len()).then_some(k as usize)
    }

    /// Writes one row per delivery hour in the ingestion format.
    pub fn write_hourly_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(COLUMNS)?;
        for day in 0..self.n_days() {
            let f = self.fuels(day);
            for h in 0..self.dim() {
                out.write_record(&[
                    format!("{} {:02}:00", self.dates[day], h),
                    self.prices[(day, h)].to_string(),
                    self.res[(day, h)].to_string(),
                    self.load[(day, h)].to_string(),
                    f[0].to_string(),
                    f[1].to_string(),
                    f[2].to_string(),
                    f[3].to_string(),
                ])?;
            }
        }
        out.flush().map_err(|e| StudyError::io("csv output", e))?;
        Ok(())
    }
}

fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    let s = s.trim();
    TIMESTAMP_FORMATS.iter().find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
}

/// Reads an hourly market CSV with 24 delivery hours per day.
pub fn ingest(path: impl AsRef<Path>) -> Result<MarketFrame> {
    let file = std::fs::File::open(path.as_ref()).map_err(|e| StudyError::io(path.as_ref(), e))?;
    ingest_reader(file, MARKET_DIM)
}

/// Like [`ingest`] with `dim` delivery periods per day.
pub fn ingest_dim(path: impl AsRef<Path>, dim: usize) -> Result<MarketFrame> {
    let file = std::fs::File::open(path.as_ref()).map_err(|e| StudyError::io(path.as_ref(), e))?;
    ingest_reader(file, dim)
}

/// Reads hourly rows with `dim` delivery periods per day.
///
/// Market days (`dim == 24`) with 23 rows get the missing hour 02 filled from
/// hour 01; days with 25 rows average the two hour-02 rows. Any other gap or
/// duplicate rejects the file with one message per offending row or day.
pub fn ingest_reader<R: Read>(reader: R, dim: usize) -> Result<MarketFrame> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let mut idx = [0usize; 8];
    let mut problems = Vec::new();
    for (k, name) in COLUMNS.iter().enumerate() {
        match headers.iter().position(|h| h.eq_ignore_ascii_case(name)) {
            Some(p) => idx[k] = p,
            None => problems.push(format!("missing column '{name}'")),
        }
    }
    if !problems.is_empty() {
        return Err(StudyError::Rejected(problems));
    }

    let mut days: BTreeMap<NaiveDate, Vec<Vec<[f64; 7]>>> = BTreeMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = match rec {
            Ok(r) => r,
            Err(e) => {
                problems.push(format!("row {line}: {e}"));
                continue;
            }
        };
        let Some(ts) = rec.get(idx[0]).and_then(parse_timestamp) else {
            problems.push(format!("row {line}: unparseable timestamp '{}'", rec.get(idx[0]).unwrap_or("")));
            continue;
        };
        let mut vals = [0.0; 7];
        let mut ok = true;
        for k in 0..7 {
            match rec.get(idx[k + 1]).map(|s| s.parse::<f64>()) {
                Some(Ok(v)) if v.is_finite() => vals[k] = v,
                _ => {
                    problems.push(format!("row {line}: bad value in column '{}'", COLUMNS[k + 1]));
                    ok = false;
                }
            }
        }
        let hour = ts.hour() as usize;
        if hour >= dim {
            problems.push(format!("row {line}: hour {hour} outside 0..{dim}"));
            ok = false;
        }
        if ok {
            days.entry(ts.date()).or_insert_with(|| vec![Vec::new(); dim])[hour].push(vals);
        }
    }

    let mut dates = Vec::with_capacity(days.len());
    let mut hourly: Vec<Vec<[f64; 7]>> = Vec::with_capacity(days.len());
    for (date, slots) in days {
        match repair_day(slots, dim) {
            Ok(v) => {
                dates.push(date);
                hourly.push(v);
            }
            Err(msg) => problems.push(format!("{date}: {msg}")),
        }
    }
    if !problems.is_empty() {
        return Err(StudyError::Rejected(problems));
    }

    let t = dates.len();
    let col = |k: usize| DMatrix::from_fn(t, dim, |d, h| hourly[d][h][k]);
    let daily = |k: usize| -> Vec<f64> { hourly.iter().map(|day| day.iter().map(|v| v[k]).sum::<f64>() / dim as f64).collect() };
    let frame = MarketFrame {
        dates,
        prices: col(0),
        res: col(1),
        load: col(2),
        eua: daily(3),
        gas: daily(4),
        coal: daily(5),
        oil: daily(6),
    };
    frame.validate()?;
    Ok(frame)
}

fn repair_day(mut slots: Vec<Vec<[f64; 7]>>, dim: usize) -> std::result::Result<Vec<[f64; 7]>, String> {
    let rows: usize = slots.iter().map(Vec::len).sum();
    let dst = dim == MARKET_DIM;
    if dst && rows == dim - 1 && slots[DST_HOUR].is_empty() && slots.iter().filter(|s| s.len() == 1).count() == dim - 1 {
        slots[DST_HOUR] = slots[DST_HOUR - 1].clone();
    } else if dst && rows == dim + 1 && slots[DST_HOUR].len() == 2 {
        let pair = std::mem::take(&mut slots[DST_HOUR]);
        let mut avg = [0.0; 7];
        for k in 0..7 {
            avg[k] = 0.5 * (pair[0][k] + pair[1][k]);
        }
        slots[DST_HOUR] = vec![avg];
    }
    let missing: Vec<usize> = (0..dim).filter(|&h| slots[h].is_empty()).collect();
    let doubled: Vec<usize> = (0..dim).filter(|&h| slots[h].len() > 1).collect();
    if !missing.is_empty() || !doubled.is_empty() {
        return Err(format!("missing hours {missing:?}, duplicated hours {doubled:?}"));
    }
    Ok(slots.into_iter().map(|s| s[0]).collect())
}
