pub mod bound;
pub mod certify;
pub mod error;
pub mod grid;
pub mod likelihood;
pub mod math;
pub mod model;
pub mod patch;
pub mod report;
pub mod rng;
pub mod sample;
pub mod solvers;
#[doc(hidden)]
pub mod testing;

pub use error::{Error, Result};
