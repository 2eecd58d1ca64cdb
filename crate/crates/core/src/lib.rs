pub mod bocpd;
pub mod bosd;
pub mod cli;
pub mod error;
pub mod json;
pub mod learning;
pub mod math;
pub mod metrics;
pub mod model;
pub mod residual;
pub mod sampler;
pub mod trace;
pub mod upm;

pub use error::{Error, Result};
