use crate::error::{data_err, Result};

use super::panel::Panel;
use super::quarter::{Quarter, QuarterRange};

/// Estimation / training / test split of the observed sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PartitionSpec {
    pub estimation: QuarterRange,
    pub training: QuarterRange,
    pub test: QuarterRange,
}

impl Default for PartitionSpec {
    /// 1947Q3–1959Q4 (50), 1960Q1–2017Q3 (231), 2017Q4–2025Q2 (31).
    fn default() -> Self {
        let q = |y, n| Quarter::new(y, n).unwrap();
        PartitionSpec {
            estimation: QuarterRange { start: q(1947, 3), end: q(1959, 4) },
            training: QuarterRange { start: q(1960, 1), end: q(2017, 3) },
            test: QuarterRange { start: q(2017, 4), end: q(2025, 2) },
        }
    }
}

impl PartitionSpec {
    /// Three contiguous ranges of the given lengths starting at `start`.
    pub fn from_lengths(start: Quarter, estimation: usize, training: usize, test: usize) -> Result<Self> {
        if estimation == 0 || training == 0 || test == 0 {
            return Err(data_err!("partition segments must be non-empty"));
        }
        let range = |s: Quarter, n: usize| QuarterRange { start: s, end: s.offset(n as i64 - 1) };
        let e = range(start, estimation);
        let t = range(e.end.next(), training);
        let x = range(t.end.next(), test);
        Ok(PartitionSpec { estimation: e, training: t, test: x })
    }

    pub fn validate(&self) -> Result<()> {
        let segs = [
            ("estimation", self.estimation),
            ("training", self.training),
            ("test", self.test),
        ];
        for (name, r) in segs {
            if r.end < r.start {
                return Err(data_err!("{name} range {r} is empty"));
            }
        }
        for w in segs.windows(2) {
            let ((an, a), (bn, b)) = (w[0], w[1]);
            if a.overlaps(&b) || b.start < a.start {
                return Err(data_err!("overlapping ranges: {an} {a} and {bn} {b}"));
            }
            if a.end.next() != b.start {
                return Err(data_err!("{an} range {a} and {bn} range {b} are not contiguous"));
            }
        }
        Ok(())
    }

    /// The full covered span, estimation start through test end.
    pub fn covered(&self) -> QuarterRange {
        QuarterRange {
            start: self.estimation.start,
            end: self.test.end,
        }
    }
}

fn segment(panel: &Panel, r: QuarterRange, name: &str) -> Result<Panel> {
    let (Some(a), Some(b)) = (panel.index_of(r.start), panel.index_of(r.end)) else {
        let span = match panel.times() {
            Some(t) if !t.is_empty() => format!("{}:{}", t[0], t[t.len() - 1]),
            _ => "no labelled rows".to_string(),
        };
        return Err(data_err!("{name} range {r} lies outside the panel ({span})"));
    };
    Ok(panel.slice_rows(a, b + 1))
}

/// Splits a labelled panel into (estimation, training, test) segments.
pub fn partition_panel(panel: &Panel, spec: &PartitionSpec) -> Result<(Panel, Panel, Panel)> {
    spec.validate()?;
    if panel.times().is_none() {
        return Err(data_err!("cannot partition a panel without time labels"));
    }
    Ok((
        segment(panel, spec.estimation, "estimation")?,
        segment(panel, spec.training, "training")?,
        segment(panel, spec.test, "test")?,
    ))
}
