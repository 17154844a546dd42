//! Multifidelity Gaussian-process active learning for locating a failure
//! boundary and estimating the probability of failure by Monte Carlo on the
//! refined surrogate.

pub mod acquisition;
pub mod bench;
pub mod distributions;
pub mod driver;
mod error;
pub mod optimize;
pub mod oracle;
pub mod reliability;
pub mod surrogate;

pub use error::{Error, Result};
