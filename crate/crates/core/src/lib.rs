//! Numerical laboratory for the extrinsic geometry of immersed surfaces in
//! `R^{2+2k}`: frames and second fundamental form, normal holonomy and complex
//! structures, the Jacobi operator and the quadratic form `q`, the `A±`
//! splitting with its holomorphicity identities, and patch stability spectra.

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod banded;
pub mod calculus;
pub mod complex;
pub mod config;
pub mod convergence;
pub mod error;
pub mod frames;
pub mod grid;
pub mod holo;
pub mod immersion;
pub mod pipeline;
pub mod report;
pub mod stability;
pub mod taylor;
pub mod variation;

pub use error::{LabError, Result};
