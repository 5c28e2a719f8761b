//! `oppsim` command line.
//!
//! Exit codes: 0 success, 1 runtime failure (e.g. unwritable output),
//! 2 usage error or missing input file, 3 invalid configuration,
//! 4 invalid contact trace.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::SizeRange;

#[derive(Debug, Parser)]
#[command(
    name = "oppsim",
    version,
    about = "Opportunistic network simulator with a congestion control layer"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one scenario and write report.csv, report.json and rd_timeline.csv.
    Run(RunArgs),
    /// Run controlled, epidemic and static spray over seeds and size ranges;
    /// write comparison.csv.
    Compare(CompareArgs),
    /// Generate a synthetic community contact trace.
    GenTrace(GenTraceArgs),
    /// Check a contact trace and print a summary.
    ValidateTrace(ValidateArgs),
}

#[derive(Debug, Args)]
struct Inputs {
    /// Config file; defaults apply to every key it omits.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Contact trace file.
    #[arg(long)]
    trace: PathBuf,
    /// Output directory, created if missing.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[command(flatten)]
    inputs: Inputs,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Overrides `routing.strategy`: epidemic, controlled, static_spray or
    /// static_spray:<limit>.
    #[arg(long)]
    strategy: Option<String>,
}

#[derive(Debug, Args)]
struct CompareArgs {
    #[command(flatten)]
    inputs: Inputs,
    /// Seeds as a comma list and/or ranges, e.g. `1,2,7` or `1..5`.
    #[arg(long, default_value = "1..5")]
    seeds: String,
    /// Data size ranges in bytes, e.g. `600-1048576,524288-1048576`.
    /// Defaults to the config's range.
    #[arg(long, value_delimiter = ',')]
    sizes: Vec<SizeRange>,
}

#[derive(Debug, Args)]
struct GenTraceArgs {
    #[arg(long, default_value_t = 2)]
    groups: u32,
    #[arg(long, default_value_t = 10)]
    nodes_per_group: u32,
    /// Contacts per intra-group pair per hour.
    #[arg(long, default_value_t = 4.0)]
    intra_rate: f64,
    /// Contacts per inter-group pair per hour.
    #[arg(long, default_value_t = 0.5)]
    inter_rate: f64,
    /// Mean contact duration, seconds.
    #[arg(long, default_value_t = 120.0)]
    mean_contact: f64,
    /// Trace length, seconds.
    #[arg(long, default_value_t = 14_400.0)]
    duration: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Output file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ValidateArgs {
    /// Trace file.
    #[arg(long)]
    trace: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => commands::run(
            a.inputs.config.as_deref(),
            &a.inputs.trace,
            a.seed,
            a.strategy.as_deref(),
            &a.inputs.out,
        ),
        Command::Compare(a) => commands::parse_seeds(&a.seeds).and_then(|seeds| {
            commands::compare(
                a.inputs.config.as_deref(),
                &a.inputs.trace,
                &seeds,
                &a.sizes,
                &a.inputs.out,
            )
        }),
        Command::GenTrace(a) => commands::gen_trace(
            &oppsim_core::trace::CommunityParams {
                groups: a.groups,
                nodes_per_group: a.nodes_per_group,
                intra_rate: a.intra_rate,
                inter_rate: a.inter_rate,
                mean_contact_duration: a.mean_contact,
                duration: match oppsim_core::SimTime::try_from_secs(a.duration) {
                    Some(t) => t,
                    None => {
                        eprintln!("error: --duration must be a finite number of seconds >= 0");
                        return ExitCode::from(2);
                    }
                },
                seed: a.seed,
            },
            &a.out,
        ),
        Command::ValidateTrace(a) => commands::validate_trace(&a.trace),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
