//! Configuration, artifacts and commands of the `nlch` harness.

pub mod commands;
pub mod config;
pub mod io;
pub mod verify;
