//! Command-line front end: scenario files, the five commands and their
//! reports.

pub mod builtin;
pub mod commands;
pub mod error;
pub mod repro;
pub mod report;
pub mod scenario;

pub use commands::{certify_cmd, optimize_cmd, regmod_cmd, verify_cmd};
pub use error::{CliError, CliResult};
pub use repro::repro;
pub use report::{CommandResult, Summary};
pub use scenario::Scenario;

/// Parses a comma-separated radius list; the empty string is the empty list.
pub fn parse_eps_list(text: &str) -> CliResult<Vec<f64>> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite() && *v >= 0.0)
                .ok_or_else(|| CliError::Config(format!("bad radius `{s}` in --eps")))
        })
        .collect()
}
