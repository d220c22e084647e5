pub mod dynamics;
pub mod error;
pub mod estimators;
pub mod geometry;
pub mod kernel;
pub mod quadrature;
pub mod real;
pub mod sampling;
pub mod stats;

pub use error::{Error, ErrorCategory, Result};
