//! Dense tensors, a recording tape for reverse-mode gradients, plain SGD and
//! a central-difference gradient checker.

mod gradcheck;
mod params;
mod tape;
mod tensor;

pub use gradcheck::{finite_diff_check, Coordinate, GradCheckReport};
pub use params::{sgd_step, ParamId, ParamStore, Parameter};
pub use tape::{softmax_values, Tape, Var, LOG_CLAMP};
pub use tensor::Tensor;
