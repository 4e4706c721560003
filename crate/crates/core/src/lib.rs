//! Path-dependent neural jump ODEs for online prediction of irregularly
//! observed processes, with output feedback and input skipping.

pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod grad;
pub mod model;
pub mod seed;
pub mod train;

pub use error::{Error, Result};
