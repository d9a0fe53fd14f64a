//! Library side of the `aethercast` binary: configuration and commands.

pub mod commands;
pub mod config;
