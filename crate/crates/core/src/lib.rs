//! Numerical laboratory for the local generation bias of diffusion models on
//! symbolic distributions.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diffusion;
pub mod dist;
pub mod error;
pub mod gen_eval;
pub mod ldr;
pub mod net;
pub mod numeric;
pub mod replication;
pub mod theory;
pub mod trainer;

pub use error::{LabError, Result};
