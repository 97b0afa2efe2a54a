//! Dense tensors, a reverse-mode differentiation tape, Adam, a
//! finite-difference gradient oracle and the checkpoint format.

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod params;
pub mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{grad_check, relative_error, GradCheckOptions, GradCheckReport};
pub use graph::{Graph, OpKind, Var};
pub use layers::Linear;
pub use params::{init_fan_in, init_normal, Gradients, ParamId, ParamStore};
pub use tensor::{Scalar, Tensor};

/// Probability helpers on plain slices.
pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    graph::softmax_rows(&Tensor::row(logits.to_vec()), None).into_data()
}

pub fn log_softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    graph::log_softmax_rows(&Tensor::row(logits.to_vec()), None).into_data()
}
