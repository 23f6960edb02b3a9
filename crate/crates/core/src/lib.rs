pub mod autodiff;
pub mod baseline;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod losses;
pub mod model;
pub mod optim;
pub mod snapshot;
pub mod trainer;

pub use autodiff::{Graph, Matrix, Var};
pub use error::{Error, Result};
