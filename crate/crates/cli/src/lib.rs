//! Command-line front end: experiment config files, subcommands and the
//! HTTP annotation service.

pub mod commands;
pub mod config;
pub mod server;
