//! File formats, dataset IO and the `cabp` command-line tool.
//!
//! The numerical pipeline lives in `cabp-core`; this crate adds what needs
//! a filesystem: manifest/CSV import, plan files, binary checkpoints, the
//! run configuration and the CLI commands.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod logs;
pub mod plan;

pub use error::{AppError, AppResult};
