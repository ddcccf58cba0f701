pub mod cli;
pub mod dataio;
pub mod error;
pub mod format;
pub mod hazard;
pub mod interpret;
pub mod kan;
mod linalg;
pub mod metrics;
pub mod model_io;
pub mod splines;
pub mod training;

pub use error::{Error, Result};
