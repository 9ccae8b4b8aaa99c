//! Wind-farm yaw control toolkit: a steady Gaussian wake model with a
//! serial-refine yaw optimizer, a quasi-dynamic farm environment, a small
//! neural-network kernel, a soft actor-critic agent, behavior-cloning
//! pretraining from optimizer demonstrations and an evaluation harness.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod env;
pub mod error;
pub mod eval;
pub mod nn;
pub mod pretrain;
pub mod sac;
pub mod turbulence;
pub mod util;
pub mod wake;
pub mod yaw_opt;

pub use error::{Error, Result};
