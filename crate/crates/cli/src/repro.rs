//! Runs every built-in scenario against the shipped expectations table.

use std::path::Path;

use serde::Serialize;

use crate::builtin::{self, Expectation};
use crate::commands::{certify_cmd, optimize_cmd, regmod_cmd, verify_cmd, EXIT_CONFIG, EXIT_NEGATIVE, EXIT_OK};
use crate::error::CliResult;
use crate::report::{write_file, CommandResult, Summary};
use crate::scenario::Scenario;

#[derive(Debug, Clone, Serialize)]
pub struct ReproRow {
    pub scenario: String,
    pub command: String,
    pub expected_exit: i32,
    pub exit_code: i32,
    pub outcome: String,
    pub summary: Summary,
    pub matched: bool,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub mismatches: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReproReport {
    pub schema: u32,
    pub tool: &'static str,
    pub command: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub generated_at: Option<String>,
    pub seed_override: Option<u64>,
    pub all_matched: bool,
    pub exit_code: i32,
    pub rows: Vec<ReproRow>,
}

pub fn run_command(name: &str, sc: &Scenario, eps: Option<&[f64]>) -> CliResult<CommandResult> {
    match name {
        "certify" => certify_cmd(sc),
        "verify-image" => verify_cmd(sc, eps),
        "regmod" => regmod_cmd(sc),
        "optimize" => optimize_cmd(sc, eps),
        other => Err(crate::error::CliError::Config(format!("unknown command `{other}`"))),
    }
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

fn check(e: &Expectation, r: &CommandResult) -> Vec<String> {
    let mut bad = Vec::new();
    if r.exit_code != e.exit_code {
        bad.push(format!("exit code {} (expected {})", r.exit_code, e.exit_code));
    }
    if let Some(o) = &e.outcome {
        if &r.outcome != o {
            bad.push(format!("outcome `{}` (expected `{o}`)", r.outcome));
        }
    }
    if let Some(s) = &e.reason_contains {
        if !r.summary.reason.as_deref().unwrap_or("").contains(s.as_str()) {
            bad.push(format!("reason {:?} lacks `{s}`", r.summary.reason));
        }
    }
    if let Some(want) = e.eps0 {
        if !r.summary.eps0.is_some_and(|got| close(got, want, e.tol)) {
            bad.push(format!("eps0 {:?} (expected {want} ± {})", r.summary.eps0, e.tol));
        }
    }
    if let Some(want) = e.kappa {
        if !r.summary.kappa.is_some_and(|got| close(got, want, e.tol)) {
            bad.push(format!("kappa {:?} (expected {want} ± {})", r.summary.kappa, e.tol));
        }
    }
    for (label, want, got) in [("ystar", &e.ystar, &r.summary.ystar), ("x_eps", &e.x_eps, &r.summary.x_eps)] {
        if let Some(want) = want {
            let ok = got
                .as_ref()
                .is_some_and(|g| g.len() == want.len() && g.iter().zip(want).all(|(a, b)| close(*a, *b, e.tol)));
            if !ok {
                bad.push(format!("{label} {got:?} (expected {want:?} ± {})", e.tol));
            }
        }
    }
    bad
}

/// Runs the table, writes `<out>/<scenario>/<command>/…` and the
/// consolidated `<out>/report.json`. Exit code 0 iff every row matched.
pub fn repro(out: &Path, seed: Option<u64>, generated_at: Option<String>) -> CliResult<ReproReport> {
    let mut rows = Vec::new();
    for e in builtin::expectations() {
        let result = Scenario::load(&e.scenario).and_then(|sc| run_command(&e.command, &sc.with_seed(seed), None));
        let row = match result {
            Ok(r) => {
                r.write(&out.join(&e.scenario).join(&e.command), generated_at.clone())?;
                let mismatches = check(&e, &r);
                ReproRow {
                    scenario: e.scenario.clone(),
                    command: e.command.clone(),
                    expected_exit: e.exit_code,
                    exit_code: r.exit_code,
                    outcome: r.outcome.clone(),
                    summary: r.summary.clone(),
                    matched: mismatches.is_empty(),
                    mismatches,
                }
            }
            Err(err) => ReproRow {
                scenario: e.scenario.clone(),
                command: e.command.clone(),
                expected_exit: e.exit_code,
                exit_code: EXIT_CONFIG,
                outcome: "error".into(),
                summary: Summary {
                    reason: Some(err.to_string()),
                    ..Summary::default()
                },
                matched: false,
                mismatches: vec![err.to_string()],
            },
        };
        rows.push(row);
    }
    let all_matched = rows.iter().all(|r| r.matched);
    let report = ReproReport {
        schema: crate::report::SCHEMA_VERSION,
        tool: "ballconv",
        command: "repro",
        generated_at,
        seed_override: seed,
        all_matched,
        exit_code: if all_matched { EXIT_OK } else { EXIT_NEGATIVE },
        rows,
    };
    write_file(out, "report.json", &crate::report::to_pretty(&report)?)?;
    Ok(report)
}
