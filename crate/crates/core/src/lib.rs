pub mod analytic;
pub mod error;
pub mod spaces;
pub mod runner;
pub mod spectral;
pub mod verifiers;

pub use error::{Error, Result};
