//! File formats, the external enhancer exchange protocol and the pipeline stages
//! behind the `dynsplat` command line.

pub mod config;
pub mod dataset;
pub mod error;
pub mod formats;
pub mod io;
pub mod pipeline;
pub mod protocol;

pub use error::{Result, RunError};
