#![allow(dead_code)]

use chrono::NaiveDate;
use mvdr_study::frame::MarketFrame;
use nalgebra::DMatrix;

pub fn date(y: i32, m: u32, d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, d).unwrap()
}

/// Hourly CSV text for `days` days of 24 hours starting 2018-01-01.
/// `skip` drops (day, hour) rows, `extra` appends rows.
pub fn hourly_csv(days: usize, skip: &[(usize, usize)], extra: &[(usize, usize, f64)]) -> String {
    let mut s = String::from("timestamp,price,res,load,eua,gas,coal,oil\n");
    let start = date(2018, 1, 1);
    for d in 0..days {
        let day = start + chrono::Days::new(d as u64);
        for h in 0..24 {
            if skip.contains(&(d, h)) {
                continue;
            }
            let p = 30.0 + d as f64 + 0.5 * h as f64;
            s.push_str(&format!("{day} {h:02}:00,{p},{},{},25.0,20.0,80.0,60.0\n", 10.0 + h as f64, 50.0 + 2.0 * h as f64));
            for &(ed, eh, ep) in extra {
                if ed == d && eh == h {
                    s.push_str(&format!("{day} {h:02}:00,{ep},{},{},25.0,20.0,80.0,60.0\n", 10.0 + h as f64, 50.0 + 2.0 * h as f64));
                }
            }
        }
    }
    s
}

/// Frame with prices `f(day, hour)`, load `1000 + h`, RES `200 + 2h`, fixed fuels.
pub fn frame_from(days: usize, dim: usize, f: impl Fn(usize, usize) -> f64) -> MarketFrame {
    let start = date(2018, 1, 1);
    MarketFrame {
        dates: (0..days).map(|d| start + chrono::Days::new(d as u64)).collect(),
        prices: DMatrix::from_fn(days, dim, |d, h| f(d, h)),
        res: DMatrix::from_fn(days, dim, |_, h| 200.0 + 2.0 * h as f64),
        load: DMatrix::from_fn(days, dim, |_, h| 1000.0 + h as f64),
        eua: vec![25.0; days],
        gas: vec![20.0; days],
        coal: vec![80.0; days],
        oil: vec![60.0; days],
    }
}
