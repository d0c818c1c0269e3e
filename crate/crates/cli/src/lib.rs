//! File formats, configuration and commands behind the `snapmatch` binary.

pub mod commands;
pub mod config;
pub mod error;
pub mod io;

pub use error::CliError;

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/cli.md")]
mod book_cli {}
