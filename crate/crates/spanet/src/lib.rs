//! File formats, configuration and the command-line front end around
//! `spanet-core`: binary PGM/PPM images, the dataset manifest, the run
//! config, `SPA1` checkpoints, CSV/text/SVG reports and the four commands.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;
pub mod pnm;
pub mod report;

pub use config::RunConfig;
pub use error::{CliError, FormatError, Result};
