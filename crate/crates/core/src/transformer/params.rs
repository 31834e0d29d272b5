use rand::SeedableRng;
use rand_distr::{Distribution, Normal};

use crate::error::{shape_err, Result};
use crate::rng;
use crate::tensor::Tensor;

use super::config::ModelConfig;

pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Init {
    Normal,
    Zeros,
    Ones,
}

/// Per-block tensors, in storage order. Keys carry no bias: it would shift
/// every score in a row equally and leave attention unchanged.
pub(crate) const BLOCK_TENSORS: [&str; 15] = [
    "ln1.gain", "ln1.bias", "attn.wq", "attn.bq", "attn.wk", "attn.wv", "attn.bv",
    "attn.wo", "attn.bo", "ln2.gain", "ln2.bias", "ffn.w_in", "ffn.b_in", "ffn.w_out", "ffn.b_out",
];

/// Canonical (name, shape, init) list; also the flattening order.
fn layout(cfg: &ModelConfig) -> Vec<(String, Vec<usize>, Init)> {
    let e = cfg.embed_dim();
    let h = cfg.hidden_dim();
    let mut out = Vec::new();
    for k in 0..cfg.n_vars {
        out.push((format!("embed.{k}"), vec![cfg.n_bins, cfg.var_dim], Init::Normal));
    }
    out.push(("pos".into(), vec![cfg.context_len, e], Init::Normal));
    for l in 0..cfg.n_layers {
        let shapes: [(Vec<usize>, Init); 15] = [
            (vec![e], Init::Ones),
            (vec![e], Init::Zeros),
            (vec![e, e], Init::Normal),
            (vec![e], Init::Zeros),
            (vec![e, e], Init::Normal),
            (vec![e, e], Init::Normal),
            (vec![e], Init::Zeros),
            (vec![e, e], Init::Normal),
            (vec![e], Init::Zeros),
            (vec![e], Init::Ones),
            (vec![e], Init::Zeros),
            (vec![e, h], Init::Normal),
            (vec![h], Init::Zeros),
            (vec![h, e], Init::Normal),
            (vec![e], Init::Zeros),
        ];
        for (name, (shape, init)) in BLOCK_TENSORS.iter().zip(shapes) {
            out.push((format!("block{l}.{name}"), shape, init));
        }
    }
    out.push(("ln_f.gain".into(), vec![e], Init::Ones));
    out.push(("ln_f.bias".into(), vec![e], Init::Zeros));
    out.push(("head.w".into(), vec![e, cfg.n_bins], Init::Normal));
    out.push(("head.b".into(), vec![cfg.n_bins], Init::Zeros));
    out
}

/// All learnable arrays of one model, in canonical order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    config: ModelConfig,
    tensors: Vec<Tensor>,
}

impl ModelParams {
    pub fn from_tensors(config: ModelConfig, tensors: Vec<Tensor>) -> Result<Self> {
        config.validate()?;
        let spec = layout(&config);
        if spec.len() != tensors.len() {
            return Err(shape_err!("expected {} parameter tensors, got {}", spec.len(), tensors.len()));
        }
        for ((name, shape, _), t) in spec.iter().zip(&tensors) {
            if t.shape() != shape.as_slice() {
                return Err(shape_err!("parameter {name} has shape {:?}, expected {shape:?}", t.shape()));
            }
        }
        Ok(ModelParams { config, tensors })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn names(&self) -> Vec<String> {
        layout(&self.config).into_iter().map(|(n, _, _)| n).collect()
    }

    /// Every scalar, concatenated in canonical order.
    pub fn flatten(&self) -> Vec<f64> {
        self.tensors.iter().flat_map(|t| t.data().iter().copied()).collect()
    }

    pub fn unflatten(config: ModelConfig, flat: &[f64]) -> Result<Self> {
        let mut tensors = Vec::new();
        let mut off = 0;
        for (_, shape, _) in layout(&config) {
            let n: usize = shape.iter().product();
            let chunk = flat
                .get(off..off + n)
                .ok_or_else(|| shape_err!("flat parameter vector too short"))?;
            tensors.push(Tensor::new(shape, chunk.to_vec())?);
            off += n;
        }
        if off != flat.len() {
            return Err(shape_err!("flat parameter vector has {} extra values", flat.len() - off));
        }
        ModelParams::from_tensors(config, tensors)
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.data().iter().all(|v| v.is_finite()))
    }

    /// Index of the first tensor of block `l` in [`Self::tensors`].
    pub(crate) fn block_offset(&self, l: usize) -> usize {
        self.config.n_vars + 1 + l * BLOCK_TENSORS.len()
    }

    pub(crate) fn final_offset(&self) -> usize {
        self.block_offset(self.config.n_layers)
    }
}

/// Weights ~ N(0, 0.02²), norm gains 1, biases 0; deterministic in `seed`.
pub fn init_model(config: &ModelConfig, seed: u64) -> Result<ModelParams> {
    init_model_with_std(config, seed, INIT_STD)
}

pub fn init_model_with_std(config: &ModelConfig, seed: u64, std: f64) -> Result<ModelParams> {
    config.validate()?;
    let mut rng = rng::StreamRng::seed_from_u64(rng::derive_seed(seed, "init", 0));
    let normal = Normal::new(0.0, std).map_err(|e| shape_err!("init std {std}: {e}"))?;
    let tensors = layout(config)
        .into_iter()
        .map(|(_, shape, init)| match init {
            Init::Normal => Tensor::from_fn(&shape, |_| normal.sample(&mut rng)),
            Init::Zeros => Tensor::zeros(&shape),
            Init::Ones => Tensor::full(&shape, 1.0),
        })
        .collect();
    ModelParams::from_tensors(*config, tensors)
}
