//! Self-supervised time-series representation learning from spectrograms.

pub mod augment;
pub mod cli;
pub mod config;
pub mod data;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod features;
pub mod numeric;
pub mod signal;
pub mod ssl;

pub use error::{Error, Result};
