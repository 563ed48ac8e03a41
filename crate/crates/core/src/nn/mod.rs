//! Dense and GRU layers with exact backward passes.
//!
//! Sequences are stored time-major: a batch of `B` sequences of length `T`
//! is a `(T * B) x width` matrix whose row `t * B + b` holds step `t` of
//! sequence `b`. A single sequence is simply `B = 1`.

mod fc;
mod gru;
mod param;

use std::fmt::{Debug, Display};
use std::ops::{AddAssign, MulAssign, SubAssign};

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive};

pub use fc::{Activation, FcLayer, FcTape};
pub use gru::{GruLayer, GruTape};
pub use param::{init_uniform, Param, ParamMut, ParamRef};

/// Floating-point element type. Training runs in `f32`; gradient checks in `f64`.
pub trait Real:
    Float
    + LinalgScalar
    + ScalarOperand
    + FromPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("representable constant")
    }
}

impl Real for f32 {}
impl Real for f64 {}

#[inline]
pub(crate) fn sigmoid<F: Real>(x: F) -> F {
    F::one() / (F::one() + (-x).exp())
}
