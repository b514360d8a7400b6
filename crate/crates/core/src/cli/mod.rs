//! Run configuration and the commands behind the `motility` binary.

mod commands;
mod config;

pub use commands::*;
pub use config::*;
