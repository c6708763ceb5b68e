//! IO companion to `hessmg-core`: plain-text mesh files, experiment
//! configuration, CSV reports, and the experiment drivers behind the
//! `hessmg` command-line tool.

pub mod config;
pub mod experiments;
pub mod meshio;
pub mod report;
