//! Dense `f64` tensors with tape-based reverse-mode differentiation, the Adam
//! optimizer and a central-difference gradient checker.

mod adam;
mod gradcheck;
mod graph;
mod kernels;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gradcheck::{grad_check, grad_check_with, GradCheckReport, ScalarFn};
pub use graph::{softmax_in_place, Fault, Graph, Var, LAYER_NORM_EPS};
pub use tensor::Tensor;

#[cfg(test)]
mod tests;
