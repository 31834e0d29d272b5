use crate::error::{data_err, Error, Result};
use crate::io_config::{apply_standardization, Panel, PartitionSpec, Quarter, StandardizationStats};
use crate::tokenizer::{encode, Token, TokenizerSpec};
use crate::trainer::Checkpoint;
use crate::tensor::softmax_in_place;
use crate::transformer::{argmax, forward, ModelParams};

/// Anything that maps a `T × K` token context to unnormalized log
/// probabilities over `J` bins.
pub trait Predictor {
    fn n_bins(&self) -> usize;
    fn context_len(&self) -> usize;
    fn target_var(&self) -> usize;
    fn logits(&self, window: &[Token]) -> Result<Vec<f64>>;
}

impl Predictor for ModelParams {
    fn n_bins(&self) -> usize {
        self.config().n_bins
    }

    fn context_len(&self) -> usize {
        self.config().context_len
    }

    fn target_var(&self) -> usize {
        self.config().target_var
    }

    fn logits(&self, window: &[Token]) -> Result<Vec<f64>> {
        forward(self, window)
    }
}

/// Equal logits, so every bin gets `1/J`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UniformPredictor {
    pub n_bins: usize,
    pub context_len: usize,
    pub target_var: usize,
}

impl Predictor for UniformPredictor {
    fn n_bins(&self) -> usize {
        self.n_bins
    }

    fn context_len(&self) -> usize {
        self.context_len
    }

    fn target_var(&self) -> usize {
        self.target_var
    }

    fn logits(&self, _window: &[Token]) -> Result<Vec<f64>> {
        Ok(vec![0.0; self.n_bins])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForecastRow {
    pub period: Quarter,
    pub probs: Vec<f64>,
    pub predicted: usize,
    pub realized_token: usize,
    /// Realized value in original units.
    pub realized_value: f64,
    pub realized_standardized: f64,
    /// Bounds of the predicted bin in original units.
    pub interval: (f64, f64),
    pub clamped: bool,
    /// Log probability of the realized token, from a log-softmax of the logits.
    pub log_prob: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForecastTable {
    pub target_name: String,
    pub n_bins: usize,
    /// Bin edges of the target in original units.
    pub edges: Vec<f64>,
    pub rows: Vec<ForecastRow>,
}

impl ForecastTable {
    pub fn clamp_count(&self) -> usize {
        self.rows.iter().filter(|r| r.clamped).count()
    }
}

/// One-step-ahead forecasts over the test segment with the checkpointed model.
pub fn rolling_forecast(ck: &Checkpoint, panel: &Panel, partition: &PartitionSpec) -> Result<ForecastTable> {
    rolling_forecast_with(&ck.params, &ck.tokenizer, &ck.stats, panel, partition)
}

/// One-step-ahead forecasts: period `t` is predicted from the `T` realized
/// quarters strictly before it, standardized with `stats` and tokenized
/// with `spec`.
pub fn rolling_forecast_with(
    model: &dyn Predictor,
    spec: &TokenizerSpec,
    stats: &StandardizationStats,
    panel: &Panel,
    partition: &PartitionSpec,
) -> Result<ForecastTable> {
    if panel.var_names() != spec.var_names() || panel.var_names() != stats.var_names.as_slice() {
        return Err(data_err!(
            "panel variables {:?} do not match the checkpoint's {:?}",
            panel.var_names(),
            spec.var_names()
        ));
    }
    let k = model.target_var();
    let t_ctx = model.context_len();
    if model.n_bins() != spec.n_bins() {
        return Err(data_err!("model has {} bins, tokenizer {}", model.n_bins(), spec.n_bins()));
    }
    let test = partition.test;
    if test.is_empty() {
        return Err(data_err!("empty test segment"));
    }
    let first = panel
        .index_of(test.start)
        .ok_or_else(|| data_err!("test start {} is outside the panel", test.start))?;
    if panel.index_of(test.end).is_none() {
        return Err(data_err!("test end {} is outside the panel", test.end));
    }
    if first < t_ctx {
        return Err(data_err!(
            "insufficient history: {first} quarters precede {}, context needs {t_ctx}",
            test.start
        ));
    }

    let z = apply_standardization(panel, stats)?;
    let tokens = encode(&z, spec)?;
    let times = panel.times().ok_or_else(|| data_err!("forecasting needs a dated panel"))?;
    let edges: Vec<f64> = spec.boundaries(k).iter().map(|&e| stats.destandardize_value(k, e)).collect();

    let mut rows = Vec::with_capacity(test.len());
    for i in first..first + test.len() {
        let logits = model.logits(tokens.rows(i - t_ctx, i))?;
        if logits.len() != spec.n_bins() {
            return Err(Error::Numerical(format!("predictor returned {} logits, expected {}", logits.len(), spec.n_bins())));
        }
        let mut probs = logits.clone();
        softmax_in_place(&mut probs);
        let total: f64 = probs.iter().sum();
        if !((total - 1.0).abs() <= 1e-9) {
            return Err(Error::Numerical(format!(
                "predictive distribution for {} sums to {total}",
                times[i]
            )));
        }
        let predicted = argmax(&probs);
        let zi = z.get(i, k);
        let realized_token = tokens.row(i)[k] as usize;
        rows.push(ForecastRow {
            period: times[i],
            predicted,
            realized_token,
            log_prob: log_softmax_at(&logits, realized_token),
            realized_value: panel.get(i, k),
            realized_standardized: zi,
            interval: (edges[predicted], edges[predicted + 1]),
            clamped: spec.is_clamped(k, zi),
            probs,
        });
    }
    Ok(ForecastTable {
        target_name: spec.var_names()[k].clone(),
        n_bins: spec.n_bins(),
        edges,
        rows,
    })
}

/// `x[i] − ln Σ exp(x)`, shifted by the maximum for stability.
fn log_softmax_at(x: &[f64], i: usize) -> f64 {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = x.iter().map(|v| (v - max).exp()).sum();
    x[i] - max - sum.ln()
}
