//! Dense tensors, reverse-mode differentiation, the LSTM and attention kernels,
//! Adam, and a finite-difference gradient checker.

pub mod adam;
pub mod gradcheck;
pub mod kernels;
pub mod real;
pub mod sparse;
pub mod tape;
pub mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState, ParamSet};
pub use gradcheck::{finite_diff_check, GradCheckReport};
pub use kernels::{attention_weights, lstm_cell, self_attention_layer, AttentionWeights, Gate, LstmWeights};
pub use real::Real;
pub use sparse::CsrMatrix;
pub use tape::{Gradients, Segment, Tape, Var};
pub use tensor::Tensor;
