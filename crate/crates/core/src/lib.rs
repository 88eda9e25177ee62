//! Kilometer-scale land simulation stack.
//!
//! Data toolkit (projection, domains, forcing, surface properties), a
//! gridcell-parallel driver over an independent-column land model, a
//! decomposition-aware aggregated writer on a NetCDF-classic codec, output
//! comparison, and a scaling/benchmark harness.

pub mod cdf5;
pub mod compare;
pub mod config;
pub mod decomp;
pub mod domain;
pub mod forcing;
pub mod surface;
pub mod error;
pub mod geoproj;
pub mod landsim;
pub mod perf;

pub use error::{Error, Result};
