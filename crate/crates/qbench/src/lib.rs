//! IO, file formats and the command line around `qbench-core`.
//!
//! - [`ingest`]: CSV exchange tables in and out.
//! - [`formats`]: task, prediction and report records (JSONL / JSON / CSV).
//! - [`config`]: the flat key-value config file.
//! - [`parallel`]: multi-threaded synthesis with sequential-identical output.
//! - [`cli`]: the `qbench` subcommands.

pub mod cli;
pub mod config;
pub mod formats;
pub mod ingest;
pub mod parallel;

pub use qbench_core as core;
