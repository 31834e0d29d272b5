//! Per-variable causal transformer over concatenated token embeddings.

mod config;
mod model;
mod params;

pub use config::{block_param_count, param_count, ModelConfig};
pub use model::{
    argmax, batch_loss, build_forward, build_loss, forward, forward_batch, forward_trace,
    predict_batch, predict_distribution, ForwardTrace, ForwardVars,
};
pub use params::{init_model, init_model_with_std, ModelParams, INIT_STD};

#[cfg(test)]
mod tests;
