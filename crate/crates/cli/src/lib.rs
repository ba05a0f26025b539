//! Command-line front end: configuration, units and file output.

pub mod commands;
pub mod config;
pub mod output;
pub mod units;
