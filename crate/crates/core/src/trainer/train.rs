use std::fmt::Write as _;
use std::path::Path;

use log::{debug, info};

use crate::error::{config_err, Error, Result};
use crate::io_config::RunConfig;
use crate::rng::{derive_seed, from_seed};
use crate::tensor::{adam_step, AdamConfig, AdamState, Graph, Var};
use crate::tokenizer::Token;
use crate::transformer::{build_loss, argmax, forward_batch, init_model, ModelConfig, ModelParams};

use super::windows::{sample_mixed_batch, WindowRef, WindowStore};

/// Windows per forward pass when scoring the validation pool.
const EVAL_CHUNK: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub alpha: f64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub max_steps: usize,
    pub eval_interval: usize,
    /// Evaluations without improvement before stopping; 0 disables early stopping.
    pub patience: usize,
    pub validation_fraction: f64,
    pub seed: u64,
}

impl TrainConfig {
    pub fn from_run(cfg: &RunConfig) -> Self {
        TrainConfig {
            batch_size: cfg.batch_size,
            alpha: cfg.alpha,
            learning_rate: cfg.learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            adam_eps: cfg.adam_eps,
            max_steps: cfg.max_steps,
            eval_interval: cfg.eval_interval,
            patience: cfg.patience,
            validation_fraction: cfg.validation_fraction,
            seed: cfg.seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(config_err!("batch_size must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(config_err!("alpha must lie in [0, 1], got {}", self.alpha));
        }
        if !(0.0..=0.5).contains(&self.validation_fraction) {
            return Err(config_err!("validation_fraction must lie in [0, 0.5]"));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(config_err!("learning_rate must be positive"));
        }
        if self.eval_interval == 0 {
            return Err(config_err!("eval_interval must be at least 1"));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
        }
    }
}

/// One row of the loss trace, written at every evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub step: usize,
    /// Mean mini-batch loss since the previous record.
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    /// Best-validation parameters (final parameters when there is no validation pool).
    pub params: ModelParams,
    pub trace: Vec<LossRecord>,
    /// Loss of the first batch before any update.
    pub initial_loss: f64,
    pub final_train_loss: f64,
    pub best_val_loss: Option<f64>,
    pub best_step: usize,
    pub steps_run: usize,
    pub stopped_early: bool,
    pub init_seed: u64,
    pub batch_seed: u64,
}

pub fn init_seed(seed: u64, target_var: usize) -> u64 {
    derive_seed(seed, "init", target_var as u64)
}

pub fn batch_seed(seed: u64, target_var: usize) -> u64 {
    derive_seed(seed, "batch", target_var as u64)
}

/// Trains a freshly initialized model for `model.target_var`.
pub fn train(store: &WindowStore, model: &ModelConfig, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let params = init_model(model, init_seed(cfg.seed, model.target_var))?;
    train_from(store, params, cfg)
}

/// Mean loss over `windows`, or `None` when there are none.
pub fn mean_window_loss(params: &ModelParams, store: &WindowStore, windows: &[WindowRef]) -> Result<Option<f64>> {
    if windows.is_empty() {
        return Ok(None);
    }
    let mut total = 0.0;
    for chunk in windows.chunks(EVAL_CHUNK) {
        let toks: Vec<&[Token]> = chunk.iter().map(|w| store.tokens(*w)).collect();
        total += crate::transformer::batch_loss(params, &toks)? * chunk.len() as f64;
    }
    Ok(Some(total / windows.len() as f64))
}

/// Share of `windows` whose final-position argmax equals the realized
/// next-period target token.
pub fn window_accuracy(params: &ModelParams, store: &WindowStore, windows: &[WindowRef]) -> Result<Option<f64>> {
    if windows.is_empty() {
        return Ok(None);
    }
    let cfg = params.config();
    let (t, k) = (cfg.context_len, cfg.n_vars);
    let mut hits = 0usize;
    for chunk in windows.chunks(EVAL_CHUNK) {
        let toks: Vec<&[Token]> = chunk.iter().map(|w| store.tokens(*w)).collect();
        let contexts: Vec<&[Token]> = toks.iter().map(|w| &w[..t * k]).collect();
        let logits = forward_batch(params, &contexts)?;
        hits += logits
            .iter()
            .zip(&toks)
            .filter(|(l, w)| argmax(l) == w[t * k + cfg.target_var] as usize)
            .count();
    }
    Ok(Some(hits as f64 / windows.len() as f64))
}

/// Adam on mixed batches with validation-based early stopping, starting
/// from `params`.
pub fn train_from(store: &WindowStore, mut params: ModelParams, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let model = *params.config();
    model.validate()?;
    if store.context_len() != model.context_len || store.n_vars() != model.n_vars {
        return Err(config_err!(
            "window store is {}×{}, model expects {}×{}",
            store.context_len(),
            store.n_vars(),
            model.context_len,
            model.n_vars
        ));
    }
    let target = model.target_var;
    let b_seed = batch_seed(cfg.seed, target);
    let mut rng = from_seed(b_seed);
    let mut adam = AdamState::new(cfg.adam(), params.tensors());

    let val_windows = store.real_validation();
    let mut best_val = None::<f64>;
    let mut best_params = params.clone();
    let mut best_step = 0;
    let mut stale = 0;
    let mut trace = Vec::new();
    let mut initial_loss = f64::NAN;
    let mut final_train_loss = f64::NAN;
    let mut running = 0.0;
    let mut running_n = 0usize;
    let mut steps_run = 0;
    let mut stopped_early = false;

    for step in 1..=cfg.max_steps {
        let batch = sample_mixed_batch(store, cfg.batch_size, cfg.alpha, &mut rng)?;
        let toks: Vec<&[Token]> = batch.iter().map(|w| store.tokens(*w)).collect();

        let mut g = Graph::new();
        let vars: Vec<Var> = params.tensors().iter().map(|t| g.param(t.clone())).collect();
        let loss_var = build_loss(&mut g, &params, &vars, &toks)?;
        let loss = g.value(loss_var).item();
        if !loss.is_finite() {
            return Err(Error::Numerical(format!("training diverged: loss {loss} at step {step}")));
        }
        if step == 1 {
            initial_loss = loss;
        }
        g.backward(loss_var)?;
        let zeros: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        let grads: Vec<&[f64]> = vars
            .iter()
            .zip(&zeros)
            .map(|(v, z)| g.grad(*v).unwrap_or(z))
            .collect();
        adam_step(params.tensors_mut(), &grads, &mut adam)?;
        if !params.is_finite() {
            return Err(Error::Numerical(format!("training diverged: non-finite parameters after step {step}")));
        }
        steps_run = step;
        final_train_loss = loss;
        running += loss;
        running_n += 1;

        if step % cfg.eval_interval == 0 || step == cfg.max_steps {
            let val = mean_window_loss(&params, store, val_windows)?;
            trace.push(LossRecord { step, train_loss: running / running_n as f64, val_loss: val });
            running = 0.0;
            running_n = 0;
            debug!("target {target} step {step}: train {loss:.4} val {val:?}");
            if let Some(v) = val {
                if best_val.is_none_or(|b| v < b) {
                    best_val = Some(v);
                    best_params = params.clone();
                    best_step = step;
                    stale = 0;
                } else {
                    stale += 1;
                    if cfg.patience > 0 && stale >= cfg.patience {
                        stopped_early = true;
                        info!("target {target}: early stop at step {step}, best validation loss at step {best_step}");
                        break;
                    }
                }
            }
        }
    }

    if best_val.is_none() {
        best_params = params;
        best_step = steps_run;
    }
    Ok(TrainOutcome {
        params: best_params,
        trace,
        initial_loss,
        final_train_loss,
        best_val_loss: best_val,
        best_step,
        steps_run,
        stopped_early,
        init_seed: init_seed(cfg.seed, target),
        batch_seed: b_seed,
    })
}

pub fn format_loss_trace(trace: &[LossRecord]) -> String {
    let mut out = String::from("step,train_loss,val_loss\n");
    for r in trace {
        let val = r.val_loss.map(|v| v.to_string()).unwrap_or_default();
        writeln!(out, "{},{},{}", r.step, r.train_loss, val).unwrap();
    }
    out
}

pub fn write_loss_trace(trace: &[LossRecord], path: &Path) -> Result<()> {
    std::fs::write(path, format_loss_trace(trace)).map_err(|e| Error::io(path, e))
}
