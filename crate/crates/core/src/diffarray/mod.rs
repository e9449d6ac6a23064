//! Dense arrays with a reverse-mode gradient tape.
//!
//! Every network and loss in the crate is built from the primitives here:
//! elementwise arithmetic and activations, reductions, channel
//! concatenation, `conv2d` and x2 bilinear upsampling. External
//! differentiable operations plug in through [`CustomOp`].

mod array;
pub mod checkpoint;
mod conv;
mod gradcheck;
mod ops;
mod params;
mod tape;

pub use array::{Array, Real};
pub use gradcheck::{grad_check, grad_check_report, GradCheck, GradCheckReport};
pub use ops::LOG_EPSILON;
pub use params::{Bound, ParamSet};
pub use tape::{CustomOp, DiffArray, Tape};
