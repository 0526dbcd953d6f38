//! Minimal reverse-mode differentiation over dense `f64` tensors, with Adam.

mod checkpoint;
mod gradcheck;
mod optim;
mod sparse;
mod tape;
mod tensor;

pub use checkpoint::Checkpoint;
pub use gradcheck::{check_gradients, relative_error, GradCheckReport};
pub use optim::{Adam, Parameter};
pub use sparse::SparseMap;
pub use tape::{gelu, Gradients, Tape, Var};
pub(crate) use tape::sigmoid;
pub use tensor::Tensor;
