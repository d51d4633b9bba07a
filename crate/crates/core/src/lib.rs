//! Numerical core of the HydraNet conflict forecaster.
//!
//! Everything in this crate is pure computation over in-memory data and builds
//! without `std` (an allocator is required). File formats, configuration and the
//! command line live in the companion `hydranet` crate.
//!
//! The pipeline, bottom-up:
//!
//! * [`transform`] and [`volume`]: grid-month event records become a
//!   `[months × channels × rows × cols]` z-stack of log magnitudes.
//! * [`sampler`]: curriculum-biased 32×32 spatial patches over the training span.
//! * [`model`]: the convolutional U-Net with ConvLSTM recurrence and six decoder heads.
//! * [`losses`], [`optim`], [`trainer`]: focal/shrinkage losses with learned
//!   uncertainty weights, and truncation-free backpropagation through time.
//! * [`forecast`]: warm-up, frozen-cell-state MC-dropout rollouts and posterior summaries.
//! * [`metrics`]: MSE, AP, ROC AUC, Brier and the no-change baseline.
//! * [`synth`]: seeded synthetic event generators with known structure.
#![cfg_attr(not(feature = "std"), no_std)]
#![forbid(unsafe_op_in_unsafe_fn)]

extern crate alloc;

pub mod error;
pub mod forecast;
pub mod losses;
pub mod math;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod optim;
pub mod real;
pub mod sampler;
pub mod synth;
pub mod tensor;
pub mod trainer;
pub mod transform;
pub mod volume;

pub use error::{Error, Result};
pub use real::Real;
pub use tensor::Tensor;

/// Number of violence types (state-based, non-state, one-sided).
pub const N_TYPES: usize = 3;
/// Number of decoder heads: one regression and one classification head per type.
pub const N_HEADS: usize = 6;
/// Head order used by every array with a head axis.
pub const HEAD_NAMES: [&str; N_HEADS] = ["reg_sb", "reg_ns", "reg_os", "cls_sb", "cls_ns", "cls_os"];
/// Short names of the three violence types, in channel order.
pub const TASK_NAMES: [&str; N_TYPES] = ["sb", "ns", "os"];
