pub mod agent;
pub mod cli;
pub mod critic;
pub mod data;
pub mod envs;
pub mod error;
pub mod gap;
pub mod nn;
pub mod vae;

pub use error::{Error, Result};
