//! File formats, dataset directories and the command-line driver around
//! [`dgdnn_core`].

pub mod cli;
pub mod config;
pub mod error;
pub mod formats;
pub mod ingest;
pub mod store;

pub use error::{CliError, Result};
