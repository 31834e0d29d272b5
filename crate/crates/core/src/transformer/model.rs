//! Forward pass: per-variable embeddings concatenated to width `E`, learned
//! positions, `L` pre-norm blocks of causal attention and a GELU feedforward,
//! a final norm and a `J`-way head.

use crate::error::{data_err, shape_err, Result};
use crate::tensor::{softmax_in_place, Graph, Var};
use crate::tokenizer::Token;

use super::config::ModelConfig;
use super::params::ModelParams;

/// Graph handles produced by one forward pass.
pub struct ForwardVars {
    /// `(batch·T) × J`
    pub logits: Var,
    /// Residual stream entering block 0, then after each block.
    pub hidden: Vec<Var>,
    /// One causal-attention node per block.
    pub attention: Vec<Var>,
}

fn check_window(cfg: &ModelConfig, w: &[Token], rows: usize) -> Result<()> {
    if w.len() != rows * cfg.n_vars {
        return Err(shape_err!(
            "window has {} tokens, expected {rows} rows × {} variables",
            w.len(),
            cfg.n_vars
        ));
    }
    if let Some(&t) = w.iter().find(|&&t| t as usize >= cfg.n_bins) {
        return Err(data_err!("token {t} out of range 0..{}", cfg.n_bins));
    }
    Ok(())
}

/// Builds logits for every position of every context window. Each window
/// holds `T` rows of `K` tokens (row-major); `vars` are the parameter nodes
/// in canonical order.
pub fn build_forward(g: &mut Graph, params: &ModelParams, vars: &[Var], windows: &[&[Token]]) -> Result<ForwardVars> {
    let cfg = *params.config();
    let (k, t) = (cfg.n_vars, cfg.context_len);
    if windows.is_empty() {
        return Err(shape_err!("empty batch"));
    }
    for w in windows {
        check_window(&cfg, w, t)?;
    }
    let batch = windows.len();

    let mut pieces = Vec::with_capacity(k);
    for var in 0..k {
        let idx: Vec<usize> = windows
            .iter()
            .flat_map(|w| (0..t).map(move |pos| w[pos * k + var] as usize))
            .collect();
        pieces.push(g.embedding(vars[var], &idx)?);
    }
    let joint = g.concat(&pieces)?;
    let mut x = g.broadcast_add(joint, vars[k])?;

    let mut hidden = vec![x];
    let mut attention = Vec::with_capacity(cfg.n_layers);
    for l in 0..cfg.n_layers {
        let p = &vars[params.block_offset(l)..];
        let h = g.layer_norm(x, p[0], p[1])?;
        let proj = |w: Var, b: Var, g: &mut Graph| -> Result<Var> {
            let y = g.matmul(h, w)?;
            g.broadcast_add(y, b)
        };
        let q = proj(p[2], p[3], g)?;
        let kk = g.matmul(h, p[4])?;
        let v = proj(p[5], p[6], g)?;
        let att = g.causal_attention(q, kk, v, batch, t, cfg.n_heads)?;
        attention.push(att);
        let o = g.matmul(att, p[7])?;
        let o = g.broadcast_add(o, p[8])?;
        x = g.add(x, o)?;

        let h2 = g.layer_norm(x, p[9], p[10])?;
        let f = g.matmul(h2, p[11])?;
        let f = g.broadcast_add(f, p[12])?;
        let f = g.gelu(f);
        let f = g.matmul(f, p[13])?;
        let f = g.broadcast_add(f, p[14])?;
        x = g.add(x, f)?;
        hidden.push(x);
    }
    let fo = params.final_offset();
    let xf = g.layer_norm(x, vars[fo], vars[fo + 1])?;
    let logits = g.matmul(xf, vars[fo + 2])?;
    let logits = g.broadcast_add(logits, vars[fo + 3])?;
    Ok(ForwardVars { logits, hidden, attention })
}

fn constants(g: &mut Graph, params: &ModelParams) -> Vec<Var> {
    params.tensors().iter().map(|t| g.constant(t.clone())).collect()
}

/// Mean next-token cross-entropy over every position of every
/// `(T + 1) × K` training window: position `t` predicts the target variable
/// at row `t + 1`.
pub fn build_loss(g: &mut Graph, params: &ModelParams, vars: &[Var], windows: &[&[Token]]) -> Result<Var> {
    let cfg = params.config();
    let (k, t) = (cfg.n_vars, cfg.context_len);
    let mut contexts = Vec::with_capacity(windows.len());
    let mut targets = Vec::with_capacity(windows.len() * t);
    for w in windows {
        check_window(cfg, w, t + 1)?;
        contexts.push(&w[..t * k]);
        targets.extend((1..=t).map(|r| w[r * k + cfg.target_var] as usize));
    }
    let fwd = build_forward(g, params, vars, &contexts)?;
    g.cross_entropy(fwd.logits, &targets)
}

/// Loss of a batch of training windows without gradient tracking.
pub fn batch_loss(params: &ModelParams, windows: &[&[Token]]) -> Result<f64> {
    let mut g = Graph::new();
    let vars = constants(&mut g, params);
    let loss = build_loss(&mut g, params, &vars, windows)?;
    Ok(g.value(loss).item())
}

/// Logits of the final position for each context window.
pub fn forward_batch(params: &ModelParams, windows: &[&[Token]]) -> Result<Vec<Vec<f64>>> {
    let mut g = Graph::new();
    let vars = constants(&mut g, params);
    let fwd = build_forward(&mut g, params, &vars, windows)?;
    let cfg = params.config();
    let logits = g.value(fwd.logits);
    Ok((0..windows.len())
        .map(|b| logits.row(b * cfg.context_len + cfg.context_len - 1).to_vec())
        .collect())
}

/// Final-position logits for one `T × K` window.
pub fn forward(params: &ModelParams, window: &[Token]) -> Result<Vec<f64>> {
    Ok(forward_batch(params, &[window])?.remove(0))
}

pub fn predict_distribution(params: &ModelParams, window: &[Token]) -> Result<Vec<f64>> {
    let mut logits = forward(params, window)?;
    softmax_in_place(&mut logits);
    Ok(logits)
}

/// One probability row per window.
pub fn predict_batch(params: &ModelParams, windows: &[&[Token]]) -> Result<Vec<Vec<f64>>> {
    let mut rows = forward_batch(params, windows)?;
    for r in &mut rows {
        softmax_in_place(r);
    }
    Ok(rows)
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(probs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = i;
        }
    }
    best
}

/// Internal activations of one window, for inspection.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// Residual stream per depth, each `T × E` row-major.
    pub hidden: Vec<Vec<f64>>,
    /// Attention probabilities per block, `[H, T, T]`.
    pub attention: Vec<Vec<f64>>,
    /// Logits at every position, `T × J`.
    pub logits: Vec<f64>,
}

pub fn forward_trace(params: &ModelParams, window: &[Token]) -> Result<ForwardTrace> {
    let mut g = Graph::new();
    let vars = constants(&mut g, params);
    let fwd = build_forward(&mut g, params, &vars, &[window])?;
    Ok(ForwardTrace {
        hidden: fwd.hidden.iter().map(|v| g.value(*v).data().to_vec()).collect(),
        attention: fwd
            .attention
            .iter()
            .map(|v| g.attention_probs(*v).unwrap().to_vec())
            .collect(),
        logits: g.value(fwd.logits).data().to_vec(),
    })
}
