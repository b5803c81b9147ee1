//! Differentiable building blocks with hand-written backward passes.
//!
//! Every layer is a small struct of [`ParamId`]s pointing into a shared
//! [`ParamStore`]. `forward` returns the output together with a cache, and
//! `backward` consumes that cache, accumulates parameter gradients into a
//! caller-owned [`Grads`] buffer and returns the input gradient. Nothing here
//! holds mutable state, so one store can serve many concurrent forwards.

mod attention;
mod conv;
mod dropout;
mod ffn;
pub mod gradcheck;
mod head;
mod init;
mod linear;
mod norm;
mod params;

pub use attention::{AttentionCache, MultiHeadAttention};
pub use conv::{CausalConv, ConvCache, ConvLayout};
pub use dropout::{dropout_backward, dropout_forward, DropMask};
pub use ffn::{FeedForward, FfnCache};
pub use head::{bce_with_logits, sigmoid};
pub use init::Init;
pub use linear::Linear;
pub use norm::{LayerNorm, NormCache};
pub use params::{Grads, ParamId, ParamStore};

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive};
use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

/// Floating-point element type. Training runs in `f32`; gradient checks in `f64`.
pub trait Scalar:
    Float
    + FromPrimitive
    + LinalgScalar
    + ScalarOperand
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Send
    + Sync
    + Debug
    + Display
    + Default
    + 'static
{
    fn from_f64_lossy(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("finite conversion")
    }

    fn as_f64(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
