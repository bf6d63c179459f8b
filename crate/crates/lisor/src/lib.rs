//! File formats, experiment runner and command-line plumbing around
//! [`lisor_core`].

pub mod config;
pub mod error;
pub mod experiment;
pub mod formats;

pub use error::{FormatError, Result};
