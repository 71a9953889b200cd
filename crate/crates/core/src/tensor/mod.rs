//! Dense tensors, differentiable primitives and the gradient tape.

mod dense;
pub mod element;
pub mod gradcheck;
pub mod ops;
mod params;
mod tape;

pub use dense::Tensor;
pub use element::{DType, Element};
pub use params::{ParamStore, Parameter};
pub use tape::{BackwardArgs, BackwardFn, Gradients, ParamId, Tape, Var};
