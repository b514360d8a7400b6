pub mod classical;
pub mod cli;
pub mod dataio;
pub mod error;
pub mod eval;
pub mod imgproc;
pub mod neural;
pub mod optflow;
pub mod represent;
pub mod synthetic;
pub mod tamura;
pub mod tenfile;

pub use error::{Error, Result};
