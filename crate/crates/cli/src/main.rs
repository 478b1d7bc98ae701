//! `encircle`: run scenarios, sweep a parameter, and check the acceptance
//! criteria.
//!
//! Exit codes: 0 ok, 1 criterion or simulation failure, 2 usage or
//! configuration error.

use std::io::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use encircle_core::sim::metrics::summarize;
use encircle_core::sim::write_sweep;
use encircle_core::verify::Verifier;
use encircle_core::{run, sweep, Error, RunOptions, Scenario};

#[derive(Parser)]
#[command(
    name = "encircle",
    version,
    about = "Decentralized encirclement of a moving 3D target"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario file or built-in scenario and write its tables.
    Run {
        /// Path to a TOML scenario, or a built-in name (see `list`).
        scenario: String,
        /// Output directory [default: $ENCIRCLE_OUT/<name>, else out/<name>].
        #[arg(long)]
        out: Option<PathBuf>,
        /// Scenario key override, e.g. controller.omega_star=1.2 (repeatable).
        #[arg(long = "override", value_name = "K=V")]
        overrides: Vec<String>,
        #[arg(long)]
        seed: Option<u64>,
        /// Step robots in parallel.
        #[arg(long)]
        parallel: bool,
        /// Also write trace.csv with every delivered message.
        #[arg(long)]
        trace: bool,
    },
    /// Run the acceptance criteria and print one line per criterion.
    Verify {
        /// Only criteria whose name contains this text (or whose number it is).
        #[arg(long)]
        filter: Option<String>,
        /// Override applied to every scenario the criteria run (repeatable).
        #[arg(long = "override", value_name = "K=V")]
        overrides: Vec<String>,
    },
    /// Run a scenario once per value of one key and tabulate the summaries.
    Sweep {
        /// Scenario key to vary, e.g. robots.count.
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        #[arg(long, default_value = "v1_fig3")]
        scenario: String,
        #[arg(long = "override", value_name = "K=V")]
        overrides: Vec<String>,
        /// Also write the table as sweep.csv in this directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List the built-in scenarios.
    List,
    /// Print the TOML of a built-in scenario.
    Show { name: String },
}

fn code(e: &Error) -> ExitCode {
    match e.root() {
        Error::Config(_) | Error::TooFewRobots { .. } | Error::InvalidWindow { .. } => {
            ExitCode::from(2)
        }
        _ => ExitCode::from(1),
    }
}

fn fail(e: &Error) -> ExitCode {
    eprintln!("error: {e}");
    code(e)
}

fn default_out(name: &str) -> PathBuf {
    let base = std::env::var_os("ENCIRCLE_OUT").map_or_else(|| PathBuf::from("out"), PathBuf::from);
    base.join(name)
}

fn cmd_run(
    scenario: &str,
    out: Option<PathBuf>,
    mut overrides: Vec<String>,
    seed: Option<u64>,
    opts: RunOptions,
) -> Result<(), Error> {
    if let Some(seed) = seed {
        overrides.push(format!("seed={seed}"));
    }
    let s = Scenario::load(scenario, &overrides)?;
    let log = run(&s, &opts)?;
    let dir = out.unwrap_or_else(|| default_out(&s.name));
    log.write_dir(&dir)?;
    print!("{}", summarize(&log)?.to_text());
    println!("{:<26} {}", "output", dir.display());
    Ok(())
}

fn cmd_sweep(
    scenario: &str,
    overrides: &[String],
    param: &str,
    values: &[String],
    out: Option<PathBuf>,
) -> Result<(), Error> {
    let opts = RunOptions {
        parallel: true,
        record_trace: false,
    };
    let rows = sweep(scenario, overrides, param, values, &opts)?;
    let mut table = Vec::new();
    write_sweep(&mut table, param, &rows)?;
    std::io::stdout().write_all(&table)?;
    if let Some(dir) = out {
        std::fs::create_dir_all(&dir)?;
        std::fs::write(dir.join("sweep.csv"), &table)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            scenario,
            out,
            overrides,
            seed,
            parallel,
            trace,
        } => {
            let opts = RunOptions {
                parallel,
                record_trace: trace,
            };
            match cmd_run(&scenario, out, overrides, seed, opts) {
                Ok(()) => ExitCode::SUCCESS,
                Err(e) => fail(&e),
            }
        }
        Command::Verify { filter, overrides } => {
            if let Err(e) = Scenario::builtin_with("v1_fig3", &overrides) {
                return fail(&e);
            }
            let results = Verifier::new(overrides).run(filter.as_deref());
            if results.is_empty() {
                eprintln!("error: no criterion matches the filter");
                return ExitCode::from(2);
            }
            for r in &results {
                println!("{}", r.line());
            }
            let failed = results.iter().filter(|r| !r.passed).count();
            println!("{} passed, {failed} failed", results.len() - failed);
            if failed == 0 {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Command::Sweep {
            param,
            values,
            scenario,
            overrides,
            out,
        } => match cmd_sweep(&scenario, &overrides, &param, &values, out) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => fail(&e),
        },
        Command::List => {
            for name in Scenario::builtin_names() {
                println!("{name}");
            }
            ExitCode::SUCCESS
        }
        Command::Show { name } => match Scenario::builtin_source(&name) {
            Some(src) => {
                print!("{src}");
                ExitCode::SUCCESS
            }
            None => {
                eprintln!("error: unknown built-in scenario `{name}`");
                ExitCode::from(2)
            }
        },
    }
}
