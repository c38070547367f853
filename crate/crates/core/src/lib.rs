//! Delayed Cucker-Smale flocking: simulation, diagnostics and flocking certificates.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod certificate;
pub mod cli;
pub mod config;
pub mod diagnostics;
pub mod dynamics;
pub mod error;
pub mod integrator;
pub mod kernel;
pub mod rng;

pub use error::{Error, Result};
