use crate::error::{data_err, shape_err, Result};

use super::panel::Panel;
use super::quarter::QuarterRange;

/// Column means and sample standard deviations of the training segment.
#[derive(Debug, Clone, PartialEq)]
pub struct StandardizationStats {
    pub var_names: Vec<String>,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    pub source_range: Option<QuarterRange>,
}

impl StandardizationStats {
    pub fn n_vars(&self) -> usize {
        self.means.len()
    }

    pub fn standardize_value(&self, k: usize, v: f64) -> f64 {
        (v - self.means[k]) / self.stds[k]
    }

    pub fn destandardize_value(&self, k: usize, z: f64) -> f64 {
        z * self.stds[k] + self.means[k]
    }
}

/// Fits stats on the training segment with Welford's recurrence (divisor n−1).
pub fn fit_standardization(training: &Panel) -> Result<StandardizationStats> {
    let n = training.n_rows();
    if n < 2 {
        return Err(data_err!("standardization needs at least 2 rows, got {n}"));
    }
    let k = training.n_vars();
    let mut means = vec![0.0; k];
    let mut m2 = vec![0.0; k];
    for i in 0..n {
        let count = (i + 1) as f64;
        for (j, &v) in training.row(i).iter().enumerate() {
            let delta = v - means[j];
            means[j] += delta / count;
            m2[j] += delta * (v - means[j]);
        }
    }
    let mut stds = Vec::with_capacity(k);
    for (j, &s) in m2.iter().enumerate() {
        let var = s / (n - 1) as f64;
        let sd = var.sqrt();
        if !(sd > 0.0) || !sd.is_finite() {
            return Err(data_err!(
                "zero variance in variable {:?}; cannot standardize",
                training.var_names()[j]
            ));
        }
        stds.push(sd);
    }
    let source_range = training.times().map(|t| QuarterRange {
        start: t[0],
        end: t[t.len() - 1],
    });
    Ok(StandardizationStats {
        var_names: training.var_names().to_vec(),
        means,
        stds,
        source_range,
    })
}

pub fn apply_standardization(panel: &Panel, stats: &StandardizationStats) -> Result<Panel> {
    check_dims(panel, stats)?;
    Ok(panel.map_values(|k, v| stats.standardize_value(k, v)))
}

pub fn invert_standardization(panel: &Panel, stats: &StandardizationStats) -> Result<Panel> {
    check_dims(panel, stats)?;
    Ok(panel.map_values(|k, z| stats.destandardize_value(k, z)))
}

fn check_dims(panel: &Panel, stats: &StandardizationStats) -> Result<()> {
    if panel.n_vars() != stats.n_vars() {
        return Err(shape_err!(
            "panel has {} variables, stats have {}",
            panel.n_vars(),
            stats.n_vars()
        ));
    }
    Ok(())
}
