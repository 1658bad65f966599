//! File formats, experiment sweeps and the command line around
//! [`qtensor_core`].

pub mod cli;
pub mod config;
pub mod error;
pub mod io;
pub mod sweep;

pub use error::{Error, FormatError, Position, Result};
pub use qtensor_core;
