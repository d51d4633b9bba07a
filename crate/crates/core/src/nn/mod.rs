//! Layer primitives with hand-written backward passes.
//!
//! Layers own no weights; they hold [`ParamId`]s into a [`ParamStore`] so a
//! model can be read concurrently while gradients accumulate in a separate
//! [`Grads`] buffer.

mod conv;
mod lstm;
pub mod ops;
mod params;

pub use conv::Conv2d;
pub use lstm::{ConvLstmCell, LstmTrace};
pub use params::{Grads, Param, ParamId, ParamStore};
