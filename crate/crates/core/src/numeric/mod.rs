//! Dense tensors, a reverse-mode tape, and the Adam optimizer.

pub mod gradcheck;
pub mod nn;
pub mod optim;
pub mod params;
pub mod tape;
pub mod tensor;

pub use gradcheck::{finite_difference_gradient, relative_error};
pub use optim::{adam_step, OptimState};
pub use params::{Gradients, ParamId, ParamStore};
pub use tape::{Adjoints, Tape, Var};
pub use tensor::Tensor;
