//! The `vnodesim` command line.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::metrics::{breakdown, compare, render_comparison, MetricsReport};
use crate::workload::{analog, run_scenario, Scenario};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_PANIC: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "vnodesim",
    version,
    about = "Trust-partitioned memory node simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Replay a scenario and write its JSON report.
    Run {
        scenario: PathBuf,
        /// Report destination; stdout when omitted.
        #[arg(short, long)]
        output: Option<PathBuf>,
        /// Boot layout replacing the scenario's first line.
        #[arg(long)]
        layout: Option<String>,
        /// Print the pressure log to stderr.
        #[arg(long)]
        log: bool,
    },
    /// Compare a baseline report with a second report.
    Compare {
        before: PathBuf,
        after: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Print buddy free-block counts from a report snapshot.
    Buddyinfo {
        report: PathBuf,
        /// Snapshot label; the final snapshot when omitted.
        #[arg(long)]
        snapshot: Option<String>,
    },
    /// Print where each app's lost launch time came from.
    Breakdown { report: PathBuf },
    /// Print the built-in phone workload scenario.
    Analog {
        /// Use the single-node layout.
        #[arg(long)]
        flat: bool,
    },
    /// Parse and check a scenario without running it.
    Validate {
        scenario: PathBuf,
        #[arg(long)]
        layout: Option<String>,
    },
}

struct Failure(i32, String);

fn input<E: std::fmt::Display>(context: &Path) -> impl FnOnce(E) -> Failure + '_ {
    move |e| Failure(EXIT_INPUT, format!("{}: {e}", context.display()))
}

fn load_scenario(path: &Path, layout: Option<&str>) -> Result<Scenario, Failure> {
    let text = std::fs::read_to_string(path).map_err(input(path))?;
    let scenario = Scenario::parse(&text).map_err(input(path))?;
    match layout {
        Some(layout) => scenario.with_layout(layout).map_err(input(path)),
        None => Ok(scenario),
    }
}

fn load_report(path: &Path) -> Result<MetricsReport, Failure> {
    let text = std::fs::read_to_string(path).map_err(input(path))?;
    MetricsReport::from_json(&text).map_err(input(path))
}

fn execute(command: Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32, Failure> {
    let io = |e: std::io::Error| Failure(EXIT_INPUT, e.to_string());
    match command {
        Command::Run {
            scenario,
            output,
            layout,
            log,
        } => {
            let parsed = load_scenario(&scenario, layout.as_deref())?;
            let report = run_scenario(&parsed).map_err(input(&scenario))?;
            if log {
                for line in report.pressure_lines() {
                    writeln!(err, "{line}").map_err(io)?;
                }
            }
            let json = report.to_json();
            match output {
                Some(path) => std::fs::write(&path, json + "\n").map_err(input(&path))?,
                None => writeln!(out, "{json}").map_err(io)?,
            }
            if let Some(panic) = report.panic {
                writeln!(
                    err,
                    "kernel panic: node {} out of memory at tick {}",
                    panic.node, panic.tick
                )
                .map_err(io)?;
                return Ok(EXIT_PANIC);
            }
        }
        Command::Compare {
            before,
            after,
            json,
        } => {
            let (b, a) = (load_report(&before)?, load_report(&after)?);
            let comparison = compare(&b, &a).map_err(|e| Failure(EXIT_INPUT, e.to_string()))?;
            if json {
                let text =
                    serde_json::to_string_pretty(&comparison).expect("comparisons serialize");
                writeln!(out, "{text}").map_err(io)?;
            } else {
                write!(out, "{}", render_comparison(&comparison)).map_err(io)?;
            }
        }
        Command::Buddyinfo { report, snapshot } => {
            let r = load_report(&report)?;
            let text = r.buddyinfo(snapshot.as_deref()).map_err(input(&report))?;
            write!(out, "{text}").map_err(io)?;
        }
        Command::Breakdown { report } => {
            let r = load_report(&report)?;
            writeln!(
                out,
                "{:<12}{:>12}{:>8}{:>8}{:>8}",
                "app", "lost ms", "lmk", "oomk", "frag"
            )
            .map_err(io)?;
            for b in breakdown(&r) {
                writeln!(
                    out,
                    "{:<12}{:>12.1}{:>7.0}%{:>7.0}%{:>7.0}%",
                    b.name,
                    b.total_us as f64 / 1000.0,
                    b.lmk * 100.0,
                    b.oomk * 100.0,
                    b.fragmentation * 100.0
                )
                .map_err(io)?;
            }
        }
        Command::Analog { flat } => {
            let layout = if flat {
                analog::FLAT_LAYOUT
            } else {
                analog::PARTITIONED_LAYOUT
            };
            write!(out, "{}", analog::scenario_text(layout)).map_err(io)?;
        }
        Command::Validate { scenario, layout } => {
            let parsed = load_scenario(&scenario, layout.as_deref())?;
            writeln!(
                out,
                "ok: {} nodes, {} profiles, {} events",
                parsed.layout.nodes.len(),
                parsed.profiles.len(),
                parsed.events.len()
            )
            .map_err(io)?;
        }
    }
    Ok(EXIT_OK)
}

/// Runs the command line and returns the process exit code.
pub fn main_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            if e.use_stderr() {
                let _ = write!(err, "{e}");
                return EXIT_USAGE;
            }
            let _ = write!(out, "{e}");
            return EXIT_OK;
        }
    };
    match execute(cli.command, out, err) {
        Ok(code) => code,
        Err(Failure(code, message)) => {
            let _ = writeln!(err, "error: {message}");
            code
        }
    }
}
