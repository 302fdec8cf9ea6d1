//! Command-line scenario runner.

use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use ssbft::harness::suite::{self, Family};
use ssbft::harness::{run_batch, run_scenario, runner, Report};
use ssbft::sim::trace::Trace;

#[derive(Parser)]
#[command(
    name = "ssbft",
    version,
    about = "Self-stabilizing BFT consensus simulator"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one scenario file.
    Run {
        scenario: PathBuf,
        /// Override the scheduler seed (and the coin seed unless pinned).
        #[arg(long)]
        seed: Option<u64>,
        /// Write the line-delimited trace here.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Write the JSON report here.
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        max_steps: Option<u64>,
    },
    /// Run every scenario file in a directory.
    Batch { dir: PathBuf },
    /// Recompute the verdicts of a saved trace.
    CheckTrace { trace: PathBuf },
    /// Print scenario `index` of a generated family as a scenario file.
    Gen {
        #[arg(value_parser = parse_family)]
        family: Family,
        #[arg(long, default_value_t = 4)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        index: u64,
    },
    /// Run a generated scenario family and print a summary.
    Suite {
        #[arg(value_parser = parse_family)]
        family: Family,
        #[arg(long, default_value_t = 4)]
        n: usize,
        #[arg(long, default_value_t = 100)]
        count: u64,
        /// Print the report of every failing scenario.
        #[arg(long)]
        verbose: bool,
    },
}

fn parse_family(s: &str) -> Result<Family, String> {
    Family::ALL
        .into_iter()
        .find(|f| f.name() == s)
        .ok_or_else(|| format!("unknown family `{s}` (clean, corrupted, differential, unfair)"))
}

fn exit(pass: bool) -> ExitCode {
    if pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(pass) => exit(pass),
        // A closed pipe (e.g. `| head`) is not an error.
        Err(e)
            if e.downcast_ref::<io::Error>()
                .is_some_and(|e| e.kind() == io::ErrorKind::BrokenPipe) =>
        {
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<bool> {
    let mut w = io::stdout().lock();
    match cli.cmd {
        Cmd::Run {
            scenario,
            seed,
            trace,
            report,
            max_steps,
        } => {
            let mut s = runner::load(&scenario)?;
            if let Some(seed) = seed {
                s = s.with_seed(seed);
            }
            if let Some(m) = max_steps {
                s.max_steps = m;
            }
            let out = run_scenario(&s)?;
            write!(w, "{}", out.report)?;
            if let Some(p) = trace {
                std::fs::write(&p, out.trace.to_lines())
                    .with_context(|| format!("writing {}", p.display()))?;
            }
            if let Some(p) = report {
                let json = serde_json::to_string_pretty(&out.report)?;
                std::fs::write(&p, json).with_context(|| format!("writing {}", p.display()))?;
            }
            Ok(out.report.passed())
        }
        Cmd::Batch { dir } => {
            let mut all = true;
            for (path, r) in run_batch(&dir)? {
                match r {
                    Ok(out) => {
                        all &= out.report.passed();
                        let tag = if out.report.passed() { "pass" } else { "FAIL" };
                        writeln!(w, "{tag}  {}", path.display())?;
                        for v in out.report.failures() {
                            writeln!(
                                w,
                                "      {} epoch {:?}: {}",
                                v.property.name(),
                                v.epoch,
                                v.detail
                            )?;
                        }
                    }
                    Err(e) => {
                        all = false;
                        writeln!(w, "ERR   {e}")?;
                    }
                }
            }
            Ok(all)
        }
        Cmd::CheckTrace { trace } => {
            let text = std::fs::read_to_string(&trace)
                .with_context(|| format!("reading {}", trace.display()))?;
            let t =
                Trace::from_lines(&text).with_context(|| format!("parsing {}", trace.display()))?;
            let r = Report::from_trace(&t);
            write!(w, "{r}")?;
            Ok(r.passed())
        }
        Cmd::Gen { family, n, index } => {
            write!(w, "{}", suite::scenario(family, n, index).to_toml())?;
            Ok(true)
        }
        Cmd::Suite {
            family,
            n,
            count,
            verbose,
        } => {
            use rayon::prelude::*;
            let outs: Vec<_> = (0..count)
                .into_par_iter()
                .map(|i| {
                    let s = suite::scenario(family, n, i);
                    (s.name.clone(), run_scenario(&s))
                })
                .collect();
            let mut failed = 0;
            let mut max_rounds = 0;
            let mut max_cycles = 0;
            let mut steps = 0;
            for (name, r) in &outs {
                let r = &r.as_ref().map_err(|e| anyhow::anyhow!("{e}"))?.report;
                steps += r.steps;
                max_rounds = max_rounds.max(
                    r.rounds_to_decide
                        .iter()
                        .flatten()
                        .copied()
                        .max()
                        .unwrap_or(0),
                );
                max_cycles = max_cycles.max(r.cycles_to_stabilize.unwrap_or(0));
                if !r.passed() {
                    failed += 1;
                    if verbose {
                        writeln!(w, "--- {name}\n{r}")?;
                    } else {
                        let props: Vec<&str> = r.failures().map(|v| v.property.name()).collect();
                        writeln!(w, "FAIL {name}: {}", props.join(", "))?;
                    }
                }
            }
            writeln!(
                w,
                "{} n={n}: {}/{count} passed, max rounds to decide {max_rounds}, max cycles to stabilize {max_cycles}, mean steps {}",
                family.name(),
                count - failed,
                steps / count.max(1)
            )?;
            Ok(failed == 0)
        }
    }
}
