//! File formats, reports, configuration and commands around
//! `patchfish-core`.

pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod ingest;
pub mod report;
