//! Dense tensor algebra with reverse-mode differentiation.
//!
//! Every trainable path in the crate is expressed as operations on a
//! [`Tape`]. Values are `f64` matrices; `1 × 1` matrices serve as scalars.
//! [`check_gradients`] and [`check_param_gradients`] compare tape gradients
//! against central differences.

mod gradcheck;
mod params;
mod tape;

pub use gradcheck::{check_gradients, check_param_gradients, DEFAULT_EPS};
pub use params::{Bound, ParamId, ParamStore};
pub use tape::{softmax_rows, Gradients, Matrix, Tape, Var};
