//! Dense tensors, a define-by-run gradient graph, and a finite-difference
//! verification harness.

mod gradcheck;
mod graph;
pub mod nn;
mod params;
mod tensor;

pub use gradcheck::{analytic_gradients, finite_difference_check, relative_error, GradCheckReport, ParamCheck};
pub use graph::{sigmoid, Activation, Graph, Var};
pub use nn::{attention, mlp_apply, scaled_dot_attention, AttentionMask, LayerVars};
pub use params::{Gradients, Owner, ParamId, ParamStore};
pub use tensor::Tensor;

#[cfg(test)]
mod tests;
