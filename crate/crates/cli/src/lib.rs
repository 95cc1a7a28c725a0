//! Scenario files, end-to-end runs and plot emission for the `dsteer`
//! command-line tool.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bundle;
pub mod config;
pub mod error;
pub mod report;

pub use bundle::{run_realize, run_scenario, Bundle, Manifest};
pub use config::{parse_config, Overrides, ScenarioConfig};
pub use error::{CliError, Result};
pub use report::emit_plot_data;

use std::path::Path;

/// Reads and parses a scenario file.
pub fn load_config(path: &Path) -> Result<ScenarioConfig> {
    let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
    parse_config(&text)
}
