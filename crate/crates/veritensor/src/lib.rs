//! File formats and the command-line front end over `veritensor-core`.

pub mod cli;
pub mod error;
pub mod modeldir;
pub mod selftest;
pub mod shape;

pub use error::CliError;
