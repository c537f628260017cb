//! Scalable cell-free massive MIMO uplink simulation and neural surrogates for
//! per-UE spectral efficiency.
//!
//! The simulator pipeline runs geometry → correlated Rayleigh channels → MMSE
//! estimation → dynamic cooperation clustering → MR / LP-MMSE combining →
//! use-and-then-forget spectral efficiency. The [`dataset`] module turns the
//! estimates and the DCC matrix into a supervised dataset and [`nn`] trains the
//! dense and 1-D convolutional surrogates on it.
//!
//! Data-parallel loops go through [`par`], which uses rayon when the
//! `parallel` feature is enabled (default) and plain iterators otherwise.
//! Results never depend on the number of worker threads.

pub mod association;
pub mod channel;
pub mod combining;
pub mod dataset;
pub mod error;
pub mod geometry;
pub mod linalg;
pub mod nn;
pub mod par;
pub mod pipeline;
pub mod report;
pub mod rng;

pub use error::{Error, Result};
