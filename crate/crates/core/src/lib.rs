//! Inner-product search structures, tensor sketches, and three iterative
//! solvers built on them: linear-sized spectral sparsification, one-sided
//! Kadison-Singer subset selection, and swap rounding for experimental design.
//!
//! All indices in the public API are 0-based.

pub mod afn;
pub mod aipe;
pub mod backend;
pub mod error;
pub mod expdesign;
pub mod generators;
pub mod ks;
pub mod linalg;
pub mod minip;
pub mod profile;
pub mod psearch;
pub mod rng;
pub mod sketch;
pub mod sparsifier;

pub use error::{Error, ErrorClass, Result};
