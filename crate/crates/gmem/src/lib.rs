//! File formats, configuration, the training runner and the command-line
//! interface for [`gmem_core`].

pub mod cli;
pub mod config;
pub mod error;
pub mod formats;
pub mod io;
pub mod pipeline;
pub mod plot;

pub use error::{Error, Result};
