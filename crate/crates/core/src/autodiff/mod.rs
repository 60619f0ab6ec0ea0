//! Dense tensors with tape-based reverse-mode differentiation.
//!
//! A [`Tape`] records every operation applied to [`Var`] handles during a
//! forward pass; [`Tape::backward`] replays it in reverse. The engine is
//! generic over [`Scalar`] so the same code runs in `f32` for training and
//! in `f64` for finite-difference checks.

mod conv;
mod ops;
mod scalar;
mod tape;
mod tensor;

pub use ops::{elementwise, reduce, ElementwiseOp, ReduceOp, INSTANCE_NORM_EPS, LEAKY_SLOPE};
pub use scalar::Scalar;
pub use tape::{Tape, Var};
pub use tensor::Tensor;
