use log::warn;
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{data_err, shape_err, Result};
use crate::io_config::QuarterRange;
use crate::tokenizer::{Token, TokenPanel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Source {
    Real,
    Synthetic,
}

/// A `(T + 1)`-row window starting at row `start` of one panel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowRef {
    pub source: Source,
    pub panel: usize,
    pub start: usize,
}

/// `(panel, start)` for every window of `context_len + 1` consecutive rows.
/// A panel of `N` rows gives `N − T` windows; shorter panels give none.
pub fn build_windows(panels: &[TokenPanel], context_len: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for (p, panel) in panels.iter().enumerate() {
        let n = panel.n_rows();
        if n <= context_len {
            warn!("panel {p} has {n} rows, needs at least {}; skipped", context_len + 1);
            continue;
        }
        out.extend((0..n - context_len).map(|s| (p, s)));
    }
    out
}

/// Real and synthetic token panels plus their window indices.
///
/// Real windows are split chronologically: the latest
/// `round(validation_fraction · n)` windows are held out for validation.
/// Synthetic windows are indexed implicitly through per-panel offsets.
#[derive(Debug, Clone)]
pub struct WindowStore {
    context_len: usize,
    n_vars: usize,
    real: Vec<TokenPanel>,
    synthetic: Vec<TokenPanel>,
    real_train: Vec<WindowRef>,
    real_val: Vec<WindowRef>,
    /// Cumulative synthetic window counts; `offsets[i]` windows precede panel `i`.
    synthetic_offsets: Vec<usize>,
    synthetic_total: usize,
}

impl WindowStore {
    pub fn new(
        real: Vec<TokenPanel>,
        synthetic: Vec<TokenPanel>,
        context_len: usize,
        validation_fraction: f64,
    ) -> Result<Self> {
        if context_len == 0 {
            return Err(shape_err!("context length must be at least 1"));
        }
        if !(0.0..=0.5).contains(&validation_fraction) {
            return Err(data_err!("validation fraction {validation_fraction} outside [0, 0.5]"));
        }
        let n_vars = real
            .iter()
            .chain(&synthetic)
            .map(TokenPanel::n_vars)
            .next()
            .ok_or_else(|| data_err!("no token panels supplied"))?;
        if let Some(p) = real.iter().chain(&synthetic).find(|p| p.n_vars() != n_vars) {
            return Err(shape_err!("token panels disagree on width: {} vs {n_vars}", p.n_vars()));
        }

        let mut real_windows: Vec<WindowRef> = build_windows(&real, context_len)
            .into_iter()
            .map(|(panel, start)| WindowRef { source: Source::Real, panel, start })
            .collect();
        let n_val = (validation_fraction * real_windows.len() as f64).round() as usize;
        let real_val = real_windows.split_off(real_windows.len() - n_val);

        if synthetic.iter().any(|p| p.n_rows() <= context_len) {
            // emits the per-panel warnings
            build_windows(&synthetic, context_len);
        }
        let mut synthetic_offsets = Vec::with_capacity(synthetic.len());
        let mut total = 0;
        for p in &synthetic {
            synthetic_offsets.push(total);
            total += p.n_rows().saturating_sub(context_len);
        }

        Ok(WindowStore {
            context_len,
            n_vars,
            real,
            synthetic,
            real_train: real_windows,
            real_val,
            synthetic_offsets,
            synthetic_total: total,
        })
    }

    pub fn context_len(&self) -> usize {
        self.context_len
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    pub fn real_train(&self) -> &[WindowRef] {
        &self.real_train
    }

    pub fn real_validation(&self) -> &[WindowRef] {
        &self.real_val
    }

    pub fn n_synthetic(&self) -> usize {
        self.synthetic_total
    }

    /// The `i`-th synthetic window in panel order.
    pub fn synthetic_window(&self, i: usize) -> WindowRef {
        assert!(i < self.synthetic_total, "synthetic window {i} out of range");
        let panel = self.synthetic_offsets.partition_point(|&o| o <= i) - 1;
        WindowRef {
            source: Source::Synthetic,
            panel,
            start: i - self.synthetic_offsets[panel],
        }
    }

    /// Flattened `(T + 1) × K` tokens of a window.
    pub fn tokens(&self, w: WindowRef) -> &[Token] {
        let panel = match w.source {
            Source::Real => &self.real[w.panel],
            Source::Synthetic => &self.synthetic[w.panel],
        };
        panel.rows(w.start, w.start + self.context_len + 1)
    }

    /// Fails if any window, in any pool, covers a quarter of `test`.
    pub fn audit_periods(&self, test: &QuarterRange) -> Result<()> {
        let pools = [(Source::Real, &self.real), (Source::Synthetic, &self.synthetic)];
        for (source, panels) in pools {
            for (p, panel) in panels.iter().enumerate() {
                let Some(times) = panel.times() else { continue };
                if panel.n_rows() <= self.context_len {
                    continue;
                }
                if let Some(q) = times.iter().find(|q| test.contains(**q)) {
                    return Err(data_err!("{source:?} panel {p} window covers test-period quarter {q}"));
                }
            }
        }
        Ok(())
    }
}

/// Number of real windows per batch: `round(α·B)`, halves rounded up.
pub fn real_count(batch_size: usize, alpha: f64) -> usize {
    ((alpha * batch_size as f64 + 0.5).floor() as usize).min(batch_size)
}

/// Draws exactly `round(α·B)` real training windows and `B − round(α·B)`
/// synthetic windows uniformly with replacement, then shuffles the batch.
pub fn sample_mixed_batch<R: Rng + ?Sized>(
    store: &WindowStore,
    batch_size: usize,
    alpha: f64,
    rng: &mut R,
) -> Result<Vec<WindowRef>> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(data_err!("alpha {alpha} outside [0, 1]"));
    }
    let n_real = real_count(batch_size, alpha);
    let n_syn = batch_size - n_real;
    if n_real > 0 && store.real_train.is_empty() {
        return Err(data_err!("batch needs {n_real} real windows but the real training pool is empty"));
    }
    if n_syn > 0 && store.synthetic_total == 0 {
        return Err(data_err!("batch needs {n_syn} synthetic windows but the synthetic pool is empty"));
    }
    let mut batch = Vec::with_capacity(batch_size);
    for _ in 0..n_real {
        batch.push(store.real_train[rng.random_range(0..store.real_train.len())]);
    }
    for _ in 0..n_syn {
        batch.push(store.synthetic_window(rng.random_range(0..store.synthetic_total)));
    }
    batch.shuffle(rng);
    Ok(batch)
}
