use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ride::bundle::{merge_shards, read_trace_bundle, write_bundle};
use ride::config::RunConfig;
use ride::synth::{write_synth, SynthError, SynthSpec};
use ride_core::validate_bundle;

const DATA_ERROR: u8 = 1;
const CONFIG_ERROR: u8 = 2;

#[derive(Parser)]
#[command(
    name = "ride",
    version,
    about = "Diagnostics for routing-prefix interventions over trace bundles"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute metrics, deltas, statistics and report tables.
    Analyze {
        #[arg(long)]
        config: PathBuf,
        /// Analyze even if validation fails.
        #[arg(long)]
        force: bool,
    },
    /// Merge shard bundles into one bundle.
    Merge {
        #[arg(required = true)]
        shards: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check every bundle invariant and list violations.
    Validate { bundle: PathBuf },
    /// Write a synthetic bundle with planted effects.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn fail(code: u8, msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("ride: {msg}");
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Analyze { config, force } => {
            let mut cfg = match RunConfig::load(&config) {
                Ok(c) => c,
                Err(e) => return fail(CONFIG_ERROR, e),
            };
            cfg.force |= force;
            match ride::cmd_analyze(&cfg) {
                Ok(out) => {
                    println!(
                        "wrote {} files to {}",
                        out.files.len(),
                        cfg.output_dir.display()
                    );
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    if let ride::AnalyzeError::Validation { report, .. } = &e {
                        for v in report.violations.iter().take(20) {
                            eprintln!("  {}", describe(v));
                        }
                    }
                    fail(e.exit_code() as u8, e)
                }
            }
        }
        Command::Merge { shards, out } => match merge_shards(&shards) {
            Ok(bundle) => match write_bundle(&bundle, &out) {
                Ok(()) => {
                    println!("merged {}", bundle.describe());
                    ExitCode::SUCCESS
                }
                Err(e) => fail(DATA_ERROR, e),
            },
            Err(e) => fail(DATA_ERROR, e),
        },
        Command::Validate { bundle } => {
            let b = match read_trace_bundle(&bundle) {
                Ok(b) => b,
                Err(e) => return fail(DATA_ERROR, e),
            };
            let report = validate_bundle(&b);
            for v in &report.violations {
                println!("{}", describe(v));
            }
            if report.passed() {
                println!("ok: {}", b.describe());
                ExitCode::SUCCESS
            } else {
                fail(
                    DATA_ERROR,
                    format!("{} violation(s)", report.violations.len()),
                )
            }
        }
        Command::Synth { spec, out } => {
            let spec = match SynthSpec::load(&spec) {
                Ok(s) => s,
                Err(e) => return fail(CONFIG_ERROR, e),
            };
            match write_synth(&spec, &out) {
                Ok(b) => {
                    println!("wrote {}", b.describe());
                    ExitCode::SUCCESS
                }
                Err(e @ (SynthError::Invalid(_) | SynthError::Infeasible(_))) => {
                    fail(CONFIG_ERROR, e)
                }
                Err(e) => fail(DATA_ERROR, e),
            }
        }
    }
}

fn describe(v: &ride_core::Violation) -> String {
    let mut s = String::new();
    if let Some(i) = &v.instance {
        s.push_str(i);
        s.push(' ');
    }
    if let Some(c) = v.condition {
        s.push_str(c.as_str());
        s.push(' ');
    }
    format!("{s}[{}] {}", v.rule, v.detail)
}
