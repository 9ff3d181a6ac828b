//! Minimal dense tensor engine: arrays, tape autodiff, parameters and
//! optimizers.

mod array;
mod graph;
mod optim;
mod params;
mod real;

pub use array::{argmax_rows, softmax_rows, Array};
pub use graph::{ConvGeom, Function, Gradients, Graph, Var};
pub use optim::{Optimizer, UpdateRule};
pub use params::{Bound, Param, ParamGrads, ParamGroup, ParamId, ParamStore};
pub use real::Real;

#[cfg(test)]
mod gradcheck;
