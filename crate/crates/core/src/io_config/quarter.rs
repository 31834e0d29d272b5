use std::fmt;
use std::str::FromStr;

use crate::error::{data_err, Error};

/// A calendar quarter, written `YYYYQn`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Quarter {
    year: i32,
    quarter: u8,
}

impl Quarter {
    pub fn new(year: i32, quarter: u8) -> Result<Self, Error> {
        if !(1..=4).contains(&quarter) {
            return Err(data_err!("quarter must be 1..=4, got {quarter}"));
        }
        Ok(Quarter { year, quarter })
    }

    pub fn year(self) -> i32 {
        self.year
    }

    pub fn quarter(self) -> u8 {
        self.quarter
    }

    /// Quarters elapsed since year 0 Q1.
    pub fn ordinal(self) -> i64 {
        self.year as i64 * 4 + (self.quarter as i64 - 1)
    }

    pub fn from_ordinal(ordinal: i64) -> Self {
        Quarter {
            year: ordinal.div_euclid(4) as i32,
            quarter: (ordinal.rem_euclid(4) + 1) as u8,
        }
    }

    pub fn next(self) -> Self {
        self.offset(1)
    }

    pub fn offset(self, quarters: i64) -> Self {
        Self::from_ordinal(self.ordinal() + quarters)
    }

    /// Number of quarters from `self` to `other` (positive when `other` is later).
    pub fn distance_to(self, other: Quarter) -> i64 {
        other.ordinal() - self.ordinal()
    }
}

impl fmt::Display for Quarter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}Q{}", self.year, self.quarter)
    }
}

impl FromStr for Quarter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        let s = s.trim();
        let (year, q) = s
            .split_once(['Q', 'q'])
            .ok_or_else(|| data_err!("bad quarter label {s:?}, expected YYYYQn"))?;
        let year: i32 = year
            .parse()
            .map_err(|_| data_err!("bad year in quarter label {s:?}"))?;
        let q: u8 = q
            .parse()
            .map_err(|_| data_err!("bad quarter number in label {s:?}"))?;
        Quarter::new(year, q)
    }
}

/// Inclusive range of quarters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QuarterRange {
    pub start: Quarter,
    pub end: Quarter,
}

impl QuarterRange {
    pub fn new(start: Quarter, end: Quarter) -> Result<Self, Error> {
        if end < start {
            return Err(data_err!("range {start}:{end} ends before it starts"));
        }
        Ok(QuarterRange { start, end })
    }

    pub fn len(&self) -> usize {
        (self.start.distance_to(self.end) + 1) as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, q: Quarter) -> bool {
        self.start <= q && q <= self.end
    }

    pub fn overlaps(&self, other: &QuarterRange) -> bool {
        self.start <= other.end && other.start <= self.end
    }
}

impl fmt::Display for QuarterRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.start, self.end)
    }
}

impl FromStr for QuarterRange {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        let (a, b) = s
            .split_once(':')
            .ok_or_else(|| data_err!("bad range {s:?}, expected YYYYQn:YYYYQn"))?;
        QuarterRange::new(a.parse()?, b.parse()?)
    }
}
