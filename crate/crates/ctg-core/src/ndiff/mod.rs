//! Dense 2-D tensors with reverse-mode automatic differentiation and Adam.
//!
//! Everything here is generic over the scalar type; the rest of the crate
//! uses the `f64` aliases exported from the crate root. The op set is the
//! minimum needed for the two GNNs, the mask optimizer and the logistic
//! surrogate: no broadcasting beyond what the ops state, no views, no GPU.

mod adam;
mod tape;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use tape::{Tape, Var};
pub use tensor::Tensor;

use num_traits::{Float, FromPrimitive, NumAssignOps, ToPrimitive};
use std::fmt::{Debug, Display};
use std::iter::Sum;

/// Floating-point scalar the tensor machinery is generic over.
pub trait Scalar:
    Float + NumAssignOps + FromPrimitive + ToPrimitive + Sum + Display + Debug + Default + Send + Sync + 'static
{
    /// Clamp floor used inside `binary_cross_entropy` so the loss stays
    /// finite when a probability rounds to exactly 0 or 1.
    fn bce_epsilon() -> Self;
}

impl Scalar for f32 {
    fn bce_epsilon() -> Self {
        1e-7
    }
}

impl Scalar for f64 {
    fn bce_epsilon() -> Self {
        1e-12
    }
}
