//! Reproducible experiment runner for the `collapse-walk` toolkit.
//!
//! `collapse-walk <command> [flags]` runs one of `born`, `walk`, `greens`,
//! `bell`, `chsh` or `c2`, writes a CSV or JSON result and, when `--output`
//! is given, a `<output>.manifest.json` next to it.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod output;
pub mod run;

pub use config::{parse_config, Command, Format, RunConfig, UsageError};
pub use run::{compute, execute, run, RunError, RunManifest};
