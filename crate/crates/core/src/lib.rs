pub mod autodiff;
pub mod checkpoint;
pub mod dataset;
pub mod error;
pub mod io;
pub mod metrics;
pub mod model;
pub mod parallel;
pub mod scenario;
pub mod signal;
pub mod train;

#[cfg(doctest)]
mod book;

pub use error::{Error, Result};
pub use scenario::{Scenario, HORIZONS};
