use std::fmt::Write as _;

use super::rolling::ForecastTable;

#[derive(Debug, Clone, PartialEq)]
pub struct VariableAccuracy {
    pub variable: String,
    pub n: usize,
    pub exact: f64,
    /// Share with `|predicted − realized| ≤ 1` on the token scale.
    pub adjacent: f64,
    pub mean_abs_token_error: f64,
    /// Mean natural-log probability assigned to the realized token.
    pub log_score: f64,
    pub clamped: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AccuracyReport {
    pub variables: Vec<VariableAccuracy>,
    /// Variables without a usable checkpoint.
    pub missing: Vec<String>,
}

pub fn score(table: &ForecastTable) -> VariableAccuracy {
    let n = table.rows.len();
    let mut exact = 0usize;
    let mut adjacent = 0usize;
    let mut abs_err = 0usize;
    // Deviations from the first row's value are summed so equal log
    // probabilities average to exactly that value.
    let log_ref = table.rows.first().map_or(0.0, |r| r.log_prob);
    let mut log_dev = 0.0;
    for r in &table.rows {
        let d = r.predicted.abs_diff(r.realized_token);
        exact += (d == 0) as usize;
        adjacent += (d <= 1) as usize;
        abs_err += d;
        log_dev += r.log_prob - log_ref;
    }
    let nf = n.max(1) as f64;
    VariableAccuracy {
        variable: table.target_name.clone(),
        n,
        exact: exact as f64 / nf,
        adjacent: adjacent as f64 / nf,
        mean_abs_token_error: abs_err as f64 / nf,
        log_score: if log_ref == f64::NEG_INFINITY { log_ref } else { log_ref + log_dev / nf },
        clamped: table.clamp_count(),
    }
}

impl AccuracyReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("variable,n,exact_accuracy,adjacent_accuracy,mean_abs_token_error,log_score,clamped\n");
        for v in &self.variables {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                v.variable, v.n, v.exact, v.adjacent, v.mean_abs_token_error, v.log_score, v.clamped
            )
            .unwrap();
        }
        out
    }

    pub fn summary(&self) -> String {
        let mut out = String::from("One-step-ahead token accuracy\n\n");
        writeln!(
            out,
            "{:<20} {:>4} {:>7} {:>9} {:>9} {:>10} {:>8}",
            "variable", "n", "exact", "adjacent", "abs err", "log score", "clamped"
        )
        .unwrap();
        for v in &self.variables {
            writeln!(
                out,
                "{:<20} {:>4} {:>7.3} {:>9.3} {:>9.3} {:>10.4} {:>8}",
                v.variable, v.n, v.exact, v.adjacent, v.mean_abs_token_error, v.log_score, v.clamped
            )
            .unwrap();
        }
        for m in &self.missing {
            writeln!(out, "{m:<20} no checkpoint; not evaluated").unwrap();
        }
        out
    }
}
