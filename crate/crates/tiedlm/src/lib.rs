//! Command-line companion to `tiedlm-core`: corpus/checkpoint/config file
//! handling, CSV reports, and the subcommand implementations.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod report;
