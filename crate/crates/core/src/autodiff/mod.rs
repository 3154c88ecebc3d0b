//! Reverse-mode automatic differentiation over dense `f64` arrays.

mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::grad_check;
pub use tape::{Primitive, Tape, Var};
pub use tensor::Tensor;
