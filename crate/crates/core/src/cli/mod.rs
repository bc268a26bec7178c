//! Command-line front end: configuration, file formats and subcommands.

pub mod commands;
pub mod config;
pub mod io;
