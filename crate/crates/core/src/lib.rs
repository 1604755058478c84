//! Battery surrogate toolkit: a P2D electrochemical simulator, a CNN
//! surrogate trained on 100-second windows of its output, and the rollout,
//! failure-warning and state-of-health tools built on the surrogate.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cycles;
pub mod electrochem;
pub mod error;
pub mod eval;
pub mod nn;
pub mod plot;
pub mod soh;
pub mod surrogate;

pub use error::{Error, Result};
