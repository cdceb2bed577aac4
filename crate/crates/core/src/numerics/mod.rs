//! Tensor arithmetic, the differentiation tape, and recurrent primitives.

pub mod graph;
pub mod lstm;
pub mod tensor;

pub use graph::{Gradients, Graph, ParamId, ParamStore, Parameter, Var};
pub use lstm::{lstm_cell, LstmParams, LstmState};
pub use tensor::{argmax, matmul, sigmoid, softmax, Tensor};
