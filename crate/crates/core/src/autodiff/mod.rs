//! Reverse-mode automatic differentiation over dense `f64` matrices.

pub mod check;
mod graph;
mod matrix;

pub use graph::{softmax_rows, Fault, Graph, Var};
pub use matrix::Matrix;
