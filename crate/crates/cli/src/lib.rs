//! Command-line front end: link documents, report formats and the `run`
//! command.

pub mod app;
pub mod config;
pub mod report;
