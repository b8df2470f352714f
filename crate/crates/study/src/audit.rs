//! Instrumented data access for the strict online protocol.
//!
//! On study day `now` a forecaster may read prices up to and including `now`
//! and day-ahead fundamentals (load and RES forecasts, fuel prices) up to
//! `now + 1`, since those are published before the auction for the next day.
//! Every other read is recorded as a violation.

use std::cell::{Cell, RefCell};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::frame::MarketFrame;

/// Read access to a [`MarketFrame`], audited or not.
pub trait DayAccess {
    fn dim(&self) -> usize;
    fn n_days(&self) -> usize;
    fn prices(&self, day: usize) -> DVector<f64>;
    fn load(&self, day: usize, h: usize) -> f64;
    fn res(&self, day: usize, h: usize) -> f64;
    fn load_base(&self, day: usize) -> f64;
    fn res_base(&self, day: usize) -> f64;
    fn fuels(&self, day: usize) -> [f64; 4];
    /// Calendar information is never restricted.
    fn weekday(&self, day: usize) -> usize;
}

impl DayAccess for MarketFrame {
    fn dim(&self) -> usize {
        MarketFrame::dim(self)
    }
    fn n_days(&self) -> usize {
        MarketFrame::n_days(self)
    }
    fn prices(&self, day: usize) -> DVector<f64> {
        self.price_row(day)
    }
    fn load(&self, day: usize, h: usize) -> f64 {
        self.load[(day, h)]
    }
    fn res(&self, day: usize, h: usize) -> f64 {
        self.res[(day, h)]
    }
    fn load_base(&self, day: usize) -> f64 {
        MarketFrame::load_base(self, day)
    }
    fn res_base(&self, day: usize) -> f64 {
        MarketFrame::res_base(self, day)
    }
    fn fuels(&self, day: usize) -> [f64; 4] {
        MarketFrame::fuels(self, day)
    }
    fn weekday(&self, day: usize) -> usize {
        MarketFrame::weekday(self, day)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub now: usize,
    pub day: usize,
    pub field: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditSummary {
    pub reads: u64,
    pub violations: Vec<Violation>,
}

/// A frame view that logs reads beyond the current study day.
pub struct AuditedFrame<'a> {
    frame: &'a MarketFrame,
    now: Cell<usize>,
    reads: Cell<u64>,
    violations: RefCell<Vec<Violation>>,
}

impl<'a> AuditedFrame<'a> {
    pub fn new(frame: &'a MarketFrame, now: usize) -> Self {
        Self { frame, now: Cell::new(now), reads: Cell::new(0), violations: RefCell::new(Vec::new()) }
    }

    pub fn set_now(&self, day: usize) {
        self.now.set(day);
    }

    pub fn now(&self) -> usize {
        self.now.get()
    }

    pub fn summary(&self) -> AuditSummary {
        AuditSummary { reads: self.reads.get(), violations: self.violations.borrow().clone() }
    }

    fn check(&self, day: usize, lead: usize, field: &str) {
        self.reads.set(self.reads.get() + 1);
        let now = self.now.get();
        if day > now + lead {
            self.violations.borrow_mut().push(Violation { now, day, field: field.to_string() });
        }
    }
}

impl DayAccess for AuditedFrame<'_> {
    fn dim(&self) -> usize {
        self.frame.dim()
    }
    fn n_days(&self) -> usize {
        self.frame.n_days()
    }
    fn prices(&self, day: usize) -> DVector<f64> {
        self.check(day, 0, "price");
        self.frame.price_row(day)
    }
    fn load(&self, day: usize, h: usize) -> f64 {
        self.check(day, 1, "load");
        self.frame.load[(day, h)]
    }
    fn res(&self, day: usize, h: usize) -> f64 {
        self.check(day, 1, "res");
        self.frame.res[(day, h)]
    }
    fn load_base(&self, day: usize) -> f64 {
        self.check(day, 1, "load");
        self.frame.load_base(day)
    }
    fn res_base(&self, day: usize) -> f64 {
        self.check(day, 1, "res");
        self.frame.res_base(day)
    }
    fn fuels(&self, day: usize) -> [f64; 4] {
        self.check(day, 1, "fuels");
        self.frame.fuels(day)
    }
    fn weekday(&self, day: usize) -> usize {
        self.frame.weekday(day)
    }
}
