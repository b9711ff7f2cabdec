//! Shot selection for accelerated full waveform inversion.
//!
//! The pipeline learns binary shot-selection masks with a compressed-learning
//! network, ranks candidate masks for a new survey by clustering autoencoder
//! latents of its shot gathers, and measures the inversion quality and cost of
//! the chosen subset against random subsets.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dcl;
pub mod error;
pub mod fwi;
pub mod geomodel;
pub mod harness;
pub mod io;
pub mod metrics;
pub mod neural;
pub mod par;
pub mod profile;
pub mod rlselect;
pub mod seed;
pub mod wavesim;

pub use error::{FwicError, Result};
