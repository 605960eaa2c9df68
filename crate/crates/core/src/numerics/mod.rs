//! Dense tensors, differentiable primitives, and the optimizer.

mod adam;
mod graph;
mod gru;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use graph::{sigmoid, softmax_slice, Graph, GruVars, Var, PROB_CLAMP};
pub(crate) use gru::uniform_init;
pub use gru::{bigru_sequence, bigru_steps, BiGruSteps, GruCellParams};
pub use tensor::Tensor;
