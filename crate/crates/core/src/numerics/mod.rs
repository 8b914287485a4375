//! Dense matrices, a reverse-mode tape over them, and finite-difference
//! gradient checking.

mod gradcheck;
pub mod math;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, GradCheckReport};
pub use tape::{Gradients, Tape, Var};
pub use tensor::{Axis, Tensor};
