//! Report envelope and plot-ready CSV artifacts.

use std::path::Path;

use serde::Serialize;

use crate::error::{CliError, CliResult};

pub const SCHEMA_VERSION: u32 = 1;

/// Outcome of one command on one scenario, with everything it writes.
#[derive(Debug, Clone)]
pub struct CommandResult {
    pub command: &'static str,
    pub scenario: String,
    pub outcome: String,
    pub exit_code: i32,
    pub body: serde_json::Value,
    pub summary: Summary,
    pub artifacts: Vec<Artifact>,
}

/// Headline numbers, used by `repro` to check expectations.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Summary {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ystar: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x_eps: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Artifact {
    pub file: String,
    pub contents: String,
}

#[derive(Serialize)]
struct Envelope<'a> {
    schema: u32,
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    scenario: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    generated_at: Option<String>,
    outcome: &'a str,
    exit_code: i32,
    summary: &'a Summary,
    #[serde(flatten)]
    body: &'a serde_json::Value,
}

pub fn timestamp() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

impl CommandResult {
    pub fn report_json(&self, generated_at: Option<String>) -> CliResult<String> {
        let env = Envelope {
            schema: SCHEMA_VERSION,
            tool: "ballconv",
            version: env!("CARGO_PKG_VERSION"),
            command: self.command,
            scenario: &self.scenario,
            generated_at,
            outcome: &self.outcome,
            exit_code: self.exit_code,
            summary: &self.summary,
            body: &self.body,
        };
        to_pretty(&env)
    }

    /// Writes `report.json` and the artifacts into `dir`.
    pub fn write(&self, dir: &Path, generated_at: Option<String>) -> CliResult<()> {
        write_file(dir, "report.json", &self.report_json(generated_at)?)?;
        for a in &self.artifacts {
            write_file(dir, &a.file, &a.contents)?;
        }
        Ok(())
    }
}

pub fn to_pretty<T: Serialize>(value: &T) -> CliResult<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

pub fn write_file(dir: &Path, name: &str, contents: &str) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

/// CSV text with the given header and numeric rows.
pub fn csv_text(header: &[String], rows: impl IntoIterator<Item = Vec<f64>>) -> CliResult<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| CliError::Io(e.to_string());
    w.write_record(header).map_err(io)?;
    for row in rows {
        w.write_record(row.iter().map(|v| v.to_string())).map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Io(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| CliError::Io(e.to_string()))
}

pub fn coord_header(prefix: &str, n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("{prefix}{i}")).collect()
}
