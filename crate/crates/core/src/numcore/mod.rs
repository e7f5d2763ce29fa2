//! Dense tensors, an eager reverse-mode differentiation graph and a
//! finite-difference gradient checker.

mod gradcheck;
mod graph;
mod tensor;

pub use gradcheck::{finite_diff_grad, relative_error};
pub use graph::{sigmoid, softplus, Graph, Op, Var};
pub use tensor::Tensor;
