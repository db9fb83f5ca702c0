//! Simulation of polarization-OAM hybrid entanglement produced by
//! down-converting a non-separable vector pump, from the Jones optics of the
//! pump line to the statistics reported from coincidence counts.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod config;
pub mod error;
pub mod io;
pub mod jones;
pub mod measurement;
pub mod par;
pub mod pipeline;
pub mod pump;
pub mod quantum;
pub mod report;
pub mod rng;
pub mod spatial;
pub mod spdc;

pub use error::{Error, Result};
