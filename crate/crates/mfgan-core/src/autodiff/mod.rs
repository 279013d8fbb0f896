//! Minimal dense-tensor engine with reverse-mode differentiation.
//!
//! [`Tensor`] holds row-major f32 data, [`Tape`] records forward ops and
//! replays them backward, [`finite_diff_grad`] is the independent oracle the
//! tape is checked against.

mod finite_diff;
mod params;
mod tape;
mod tensor;

pub use finite_diff::{finite_diff_grad, max_relative_error};
pub use params::Parameterized;
pub use tape::{GradientSet, Tape, ValueId, MASK_FILL};
pub use tensor::{matmul_raw, Tensor};
