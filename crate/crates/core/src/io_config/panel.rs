use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{data_err, shape_err, Error, Result};

use super::quarter::Quarter;

/// Row-major `n_rows × K` block of observations with optional quarter labels.
///
/// Real data always carries labels; simulated panels do not.
#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    times: Option<Vec<Quarter>>,
    values: Vec<f64>,
    var_names: Vec<String>,
}

impl Panel {
    pub fn new(times: Option<Vec<Quarter>>, values: Vec<f64>, var_names: Vec<String>) -> Result<Self> {
        let k = var_names.len();
        if k == 0 {
            return Err(shape_err!("panel needs at least one variable"));
        }
        if values.len() % k != 0 {
            return Err(shape_err!(
                "{} values do not fill rows of {k} variables",
                values.len()
            ));
        }
        let n = values.len() / k;
        if let Some(t) = &times {
            if t.len() != n {
                return Err(shape_err!("{} time labels for {n} rows", t.len()));
            }
            check_quarterly(t)?;
        }
        Ok(Panel {
            times,
            values,
            var_names,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.values.len() / self.var_names.len()
    }

    pub fn n_vars(&self) -> usize {
        self.var_names.len()
    }

    pub fn var_names(&self) -> &[String] {
        &self.var_names
    }

    pub fn times(&self) -> Option<&[Quarter]> {
        self.times.as_deref()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let k = self.n_vars();
        &self.values[i * k..(i + 1) * k]
    }

    pub fn get(&self, i: usize, k: usize) -> f64 {
        self.values[i * self.n_vars() + k]
    }

    pub fn column(&self, k: usize) -> impl Iterator<Item = f64> + '_ {
        self.values.iter().skip(k).step_by(self.n_vars()).copied()
    }

    /// Row index of quarter `q`, if labelled and present.
    pub fn index_of(&self, q: Quarter) -> Option<usize> {
        let t = self.times.as_ref()?;
        let first = *t.first()?;
        let idx = first.distance_to(q);
        (idx >= 0 && (idx as usize) < t.len()).then_some(idx as usize)
    }

    /// Rows `start..end` as a new panel.
    pub fn slice_rows(&self, start: usize, end: usize) -> Panel {
        let k = self.n_vars();
        Panel {
            times: self.times.as_ref().map(|t| t[start..end].to_vec()),
            values: self.values[start * k..end * k].to_vec(),
            var_names: self.var_names.clone(),
        }
    }

    pub(crate) fn map_values(&self, mut f: impl FnMut(usize, f64) -> f64) -> Panel {
        let k = self.n_vars();
        let values = self
            .values
            .iter()
            .enumerate()
            .map(|(i, &v)| f(i % k, v))
            .collect();
        Panel {
            times: self.times.clone(),
            values,
            var_names: self.var_names.clone(),
        }
    }

    #[cfg(test)]
    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Concatenates panels with identical variables in order.
    pub fn concat(parts: &[&Panel]) -> Result<Panel> {
        let first = parts
            .first()
            .ok_or_else(|| shape_err!("nothing to concatenate"))?;
        let labelled = first.times.is_some();
        let mut times = labelled.then(Vec::new);
        let mut values = Vec::new();
        for p in parts {
            if p.var_names != first.var_names {
                return Err(shape_err!("variable mismatch in concatenation"));
            }
            match (&mut times, &p.times) {
                (Some(acc), Some(t)) => acc.extend_from_slice(t),
                (None, None) => {}
                _ => return Err(shape_err!("cannot mix labelled and unlabelled panels")),
            }
            values.extend_from_slice(&p.values);
        }
        Panel::new(times, values, first.var_names.clone())
    }
}

fn check_quarterly(times: &[Quarter]) -> Result<()> {
    for (i, w) in times.windows(2).enumerate() {
        if w[1] <= w[0] {
            return Err(data_err!(
                "non-monotone time index at row {}: {} follows {}",
                i + 2,
                w[1],
                w[0]
            ));
        }
        if w[1] != w[0].next() {
            return Err(data_err!(
                "gap in quarterly time index at row {}: {} follows {}",
                i + 2,
                w[1],
                w[0]
            ));
        }
    }
    Ok(())
}

/// Reads a real-data CSV: a `YYYYQn` date column followed by `expected_vars`
/// in order. Rows are numbered from 1 after the header in error messages.
pub fn load_real_panel(path: &Path, expected_vars: &[String]) -> Result<Panel> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_real_panel(&text, expected_vars)
}

pub fn parse_real_panel(text: &str, expected_vars: &[String]) -> Result<Panel> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| data_err!("empty CSV"))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols.len() != expected_vars.len() + 1 {
        return Err(data_err!(
            "header has {} variable columns, expected {}",
            cols.len().saturating_sub(1),
            expected_vars.len()
        ));
    }
    for (got, want) in cols[1..].iter().zip(expected_vars) {
        if got != want {
            return Err(data_err!("header column {got:?} does not match expected {want:?}"));
        }
    }

    let k = expected_vars.len();
    let mut times = Vec::new();
    let mut values = Vec::new();
    for (i, line) in lines.enumerate() {
        let row = i + 1;
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if cells.len() != k + 1 {
            return Err(data_err!(
                "malformed row {row}: {} fields, expected {}",
                cells.len(),
                k + 1
            ));
        }
        let q: Quarter = cells[0]
            .parse()
            .map_err(|e| data_err!("malformed row {row}: {e}"))?;
        if let Some(&prev) = times.last() {
            if q <= prev {
                return Err(data_err!("non-monotone time index at row {row}: {q} follows {prev}"));
            }
        }
        times.push(q);
        for (cell, name) in cells[1..].iter().zip(expected_vars) {
            if cell.is_empty() || cell.eq_ignore_ascii_case("na") || cell.eq_ignore_ascii_case("nan") {
                return Err(data_err!("missing value at row {row}, column {name:?}"));
            }
            let v: f64 = cell
                .parse()
                .map_err(|_| data_err!("malformed row {row}: column {name:?} value {cell:?}"))?;
            if !v.is_finite() {
                return Err(data_err!("missing value at row {row}, column {name:?}"));
            }
            values.push(v);
        }
    }
    Panel::new(Some(times), values, expected_vars.to_vec())
}

/// Writes a labelled panel in the real-data CSV schema.
pub fn write_real_panel(panel: &Panel, path: &Path) -> Result<()> {
    let times = panel
        .times()
        .ok_or_else(|| data_err!("panel has no time labels"))?;
    let mut out = String::from("date");
    for name in panel.var_names() {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for (i, t) in times.iter().enumerate() {
        write!(out, "{t}").unwrap();
        for v in panel.row(i) {
            write!(out, ",{v}").unwrap();
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(k: usize) -> Vec<String> {
        (0..k).map(|i| format!("v{i}")).collect()
    }

    fn header(k: usize) -> String {
        let mut h = "date".to_string();
        for n in names(k) {
            h.push(',');
            h.push_str(&n);
        }
        h
    }

    #[test]
    fn three_rows_seven_columns() {
        let csv = format!(
            "{}\n2000Q1,1,2,3,4,5,6,7\n2000Q2,1,2,3,4,5,6,7.5\n2000Q3,0,0,0,0,0,0,-1e-3\n",
            header(7)
        );
        let p = parse_real_panel(&csv, &names(7)).unwrap();
        assert_eq!(p.n_rows(), 3);
        assert_eq!(p.n_vars(), 7);
        assert_eq!(p.get(1, 6), 7.5);
        assert_eq!(p.times().unwrap()[2].to_string(), "2000Q3");
    }

    #[test]
    fn out_of_order_dates_rejected() {
        let csv = format!("{}\n2000Q2,1,2\n2000Q1,1,2\n", header(2));
        let err = parse_real_panel(&csv, &names(2)).unwrap_err().to_string();
        assert!(err.contains("non-monotone time index"), "{err}");
    }

    #[test]
    fn gap_rejected() {
        let csv = format!("{}\n2000Q1,1,2\n2000Q3,1,2\n", header(2));
        let err = parse_real_panel(&csv, &names(2)).unwrap_err().to_string();
        assert!(err.contains("gap"), "{err}");
    }

    #[test]
    fn empty_cell_names_row_and_column() {
        let csv = format!("{}\n2000Q1,1,2\n2000Q2,,2\n", header(2));
        let err = parse_real_panel(&csv, &names(2)).unwrap_err().to_string();
        assert!(err.contains("row 2"), "{err}");
        assert!(err.contains("\"v0\""), "{err}");
    }

    #[test]
    fn malformed_row_and_header() {
        let csv = format!("{}\n2000Q1,1\n", header(2));
        assert!(parse_real_panel(&csv, &names(2)).unwrap_err().to_string().contains("malformed row 1"));
        let csv = "date,a,b\n2000Q1,1,2\n";
        assert!(parse_real_panel(csv, &names(2)).is_err());
    }

    #[test]
    fn missing_file() {
        let err = load_real_panel(Path::new("/nonexistent/real.csv"), &names(2)).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    #[test]
    fn write_then_read() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        let csv = format!("{}\n1999Q4,0.1,2\n2000Q1,-3.25,1e-17\n", header(2));
        let p = parse_real_panel(&csv, &names(2)).unwrap();
        write_real_panel(&p, &path).unwrap();
        assert_eq!(load_real_panel(&path, &names(2)).unwrap(), p);
    }
}
