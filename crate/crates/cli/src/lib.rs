//! Library surface behind the `zinbs` binary: configuration, ingestion,
//! artifact codecs, and the subcommand implementations.

pub mod artifacts;
pub mod commands;
pub mod config;
pub mod data;
pub mod error;
pub mod fmt;
