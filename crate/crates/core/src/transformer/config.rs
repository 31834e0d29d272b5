use crate::error::{config_err, Result};

/// Shape of one per-variable forecasting model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    /// K
    pub n_vars: usize,
    /// J
    pub n_bins: usize,
    /// d, width of each variable's embedding.
    pub var_dim: usize,
    /// L
    pub n_layers: usize,
    /// H
    pub n_heads: usize,
    /// T
    pub context_len: usize,
    pub target_var: usize,
    /// Hidden width of the feedforward block is `mlp_factor · E`.
    pub mlp_factor: usize,
}

impl ModelConfig {
    /// Baseline: K=7, J=10, d=8 (E=56), L=2, H=2, T=4, feedforward factor 2.
    pub fn baseline(target_var: usize) -> Self {
        ModelConfig {
            n_vars: 7,
            n_bins: 10,
            var_dim: 8,
            n_layers: 2,
            n_heads: 2,
            context_len: 4,
            target_var,
            mlp_factor: 2,
        }
    }

    /// E = K · d
    pub fn embed_dim(&self) -> usize {
        self.n_vars * self.var_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.mlp_factor * self.embed_dim()
    }

    pub fn validate(&self) -> Result<()> {
        let e = self.embed_dim();
        if self.n_vars == 0 || self.var_dim == 0 {
            return Err(config_err!("model needs at least one variable and a positive embedding width"));
        }
        if self.n_heads == 0 || e % self.n_heads != 0 {
            return Err(config_err!("embedding width {e} is not divisible by {} heads", self.n_heads));
        }
        if self.n_bins < 2 {
            return Err(config_err!("need at least 2 tokens per variable"));
        }
        if self.context_len == 0 {
            return Err(config_err!("context length must be at least 1"));
        }
        if self.target_var >= self.n_vars {
            return Err(config_err!("target variable {} out of range 0..{}", self.target_var, self.n_vars));
        }
        if self.mlp_factor == 0 {
            return Err(config_err!("mlp_factor must be at least 1"));
        }
        Ok(())
    }
}

/// Learnable scalars in one transformer block.
pub fn block_param_count(cfg: &ModelConfig) -> usize {
    let e = cfg.embed_dim();
    let h = cfg.hidden_dim();
    let norms = 2 * (2 * e);
    let attention = 4 * e * e + 3 * e;
    let feedforward = (e * h + h) + (h * e + e);
    norms + attention + feedforward
}

/// Closed-form count of all learnable scalars.
pub fn param_count(cfg: &ModelConfig) -> usize {
    let e = cfg.embed_dim();
    let embeddings = cfg.n_vars * cfg.n_bins * cfg.var_dim;
    let positional = cfg.context_len * e;
    let final_norm = 2 * e;
    let head = e * cfg.n_bins + cfg.n_bins;
    embeddings + positional + cfg.n_layers * block_param_count(cfg) + final_norm + head
}
