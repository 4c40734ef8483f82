//! Recurrent digital predistortion with delta-network temporal sparsity.
//!
//! The crate covers the whole loop: OFDM test signals and datasets
//! ([`signal`]), dense GRU/JANET predistorters ([`rnncore`]), thresholded
//! delta execution with exact operation accounting ([`delta`]), power
//! amplifier stand-ins ([`pa`]), end-to-end training ([`train`]),
//! linearization metrics ([`metrics`]) and the cost/energy model ([`cost`]).

// Validation uses `!(x > 0.0)` forms on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cost;
pub mod delta;
pub mod dsp;
pub mod error;
pub mod metrics;
pub mod pa;
pub mod rnncore;
pub mod signal;
pub mod train;

pub use error::{Error, Result};
pub use num_complex::Complex64;
