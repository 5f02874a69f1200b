//! Streaming principal-component estimation with Krasulina/Oja updates,
//! distributed (mini-batch) variants over a simulated network, step-size and
//! error-bound planners, synthetic data generation and a Monte-Carlo harness.

// `!(x > 0.0)` deliberately rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod error;
pub mod estimator;
pub mod exact_sum;
pub mod harness;
pub mod io;
pub mod linalg;
pub mod network;
pub mod schedule;

pub use error::{Error, Result};
pub use estimator::{EigenEstimate, SampleBatch, UpdateRule};
