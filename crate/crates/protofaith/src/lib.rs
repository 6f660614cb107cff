//! File formats and the command-line driver around `protofaith-core`.

pub mod cli;
pub mod error;
pub mod io;

pub use error::{Error, Result};
