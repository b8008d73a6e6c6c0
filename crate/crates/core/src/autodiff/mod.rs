//! Minimal reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Graph`] is built per forward pass: every operation appends a node
//! holding its value, and [`Graph::backward`] sweeps the nodes in reverse to
//! accumulate gradients. Trainable tensors live in a [`ParamStore`] and are
//! placed on a graph with [`Graph::param`].

mod gradcheck;
mod graph;
mod params;
mod tensor;

pub use gradcheck::{grad_check, GradReport, GradSample, REL_ERR_FLOOR};
pub use graph::{Gradients, Graph, Var};
pub use params::{ParamEntry, ParamId, ParamStore};
pub use tensor::Tensor;
