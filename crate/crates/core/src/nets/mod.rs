//! Small differentiable networks with hand-written reverse-mode gradients.
//!
//! Parameters of a whole model live in one flat [`NetParams`] vector; every
//! layer owns [`Slot`]s into it. Forward passes return a cache that the
//! matching backward pass consumes, accumulating into a gradient buffer of the
//! same length as the parameters.
//!
//! Everything is generic over [`Real`] so that training can run in `f32`
//! while gradient checks run in `f64`.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, ToPrimitive};

mod adam;
pub(crate) mod backbone;
pub mod checkpoint;
pub mod gradcheck;
mod head;
mod layers;
mod model;
mod params;

pub use adam::Adam;
pub use backbone::{Backbone, BackboneCache, BackboneConfig, COND_DIM};
pub use head::{Head, HeadArch, HeadCache, HeadConfig, HeadTime};
pub use layers::{time_embedding, TIME_EMB_DIM};
pub use model::{Counters, FmCache, Model, ModelConfig, ModelKind};
pub use params::{LayoutBuilder, NetParams, ParamSpec, Slot};

pub trait Real:
    Float
    + LinalgScalar
    + ScalarOperand
    + FromPrimitive
    + ToPrimitive
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + 'static
{
}

impl Real for f32 {}
impl Real for f64 {}

#[inline]
pub(crate) fn real<F: Real>(x: f64) -> F {
    F::from_f64(x).unwrap()
}
