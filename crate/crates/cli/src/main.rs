use std::path::PathBuf;
use std::process::ExitCode;

use ballconv_cli::commands::EXIT_CONFIG;
use ballconv_cli::report::timestamp;
use ballconv_cli::{parse_eps_list, repro, CliResult, Scenario};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "ballconv", version, about = "Certify and test convexity of images of balls under f + G")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Scenario file, or the name of a built-in scenario.
    #[arg(long)]
    scenario: String,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct Output {
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides the sampler seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Omit the timestamp from reports.
    #[arg(long)]
    no_timestamp: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Certified convexity radius (exit 0: certificate, 2: none).
    Certify(Common),
    /// Sampled convexity defect curve (exit 0: pass, 3: fail).
    VerifyImage {
        #[command(flatten)]
        common: Common,
        /// Comma-separated radii.
        #[arg(long)]
        eps: Option<String>,
    },
    /// Regularity modulus of the multifunction (exit 0: finite, 2: refuted).
    Regmod(Common),
    /// Efficient pair and Lagrangian scalarizer (exit 1 without a cone).
    Optimize {
        #[command(flatten)]
        common: Common,
        /// Radius (first entry used).
        #[arg(long)]
        eps: Option<String>,
    },
    /// Runs all built-in scenarios against the expectations table.
    Repro(Output),
}

fn stamp(o: &Output) -> Option<String> {
    (!o.no_timestamp).then(timestamp)
}

fn run(cli: Cli) -> CliResult<i32> {
    let (common, eps, name) = match cli.command {
        Command::Repro(o) => {
            let report = repro(&o.out, o.seed, stamp(&o))?;
            for row in &report.rows {
                let mark = if row.matched { "ok" } else { "MISMATCH" };
                println!("{mark:8} {:26} {:13} exit {} {}", row.scenario, row.command, row.exit_code, row.outcome);
                for m in &row.mismatches {
                    println!("         {m}");
                }
            }
            return Ok(report.exit_code);
        }
        Command::Certify(c) => (c, None, "certify"),
        Command::VerifyImage { common, eps } => (common, eps, "verify-image"),
        Command::Regmod(c) => (c, None, "regmod"),
        Command::Optimize { common, eps } => (common, eps, "optimize"),
    };
    let eps = eps.as_deref().map(parse_eps_list).transpose()?;
    let sc = Scenario::load(&common.scenario)?.with_seed(common.output.seed);
    let result = ballconv_cli::repro::run_command(name, &sc, eps.as_deref())?;
    result.write(&common.output.out, stamp(&common.output))?;
    println!("{} {}: {} (exit {})", name, result.scenario, result.outcome, result.exit_code);
    if let Some(reason) = &result.summary.reason {
        println!("  {reason}");
    }
    Ok(result.exit_code)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_CONFIG as u8)
        }
    }
}
