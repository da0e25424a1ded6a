//! Std companion to `hitmat-core`: file formats, configuration, run
//! manifests, a thread-pool runtime, and the command implementations behind
//! the `hitmat` binary. Everything here shells out to the core crate for the
//! actual numerics; this layer only moves bytes.

pub mod commands;
pub mod config;
pub mod error;
pub mod exec;
pub mod io;
pub mod manifest;

pub use error::CliError;
