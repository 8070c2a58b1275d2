use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use manet_sim::experiment;
use manet_sim::kernel::TraceRecord;
use manet_sim::metrics::emit_csv;
use manet_sim::scenario::{parse_scenario, ScenarioConfig};
use manet_sim::Protocol;

#[derive(Parser)]
#[command(name = "sim", version, about = "Discrete-event MANET simulator (AODV and PC-AODV)")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write a single CSV row.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        /// Overrides the protocol named in the scenario (aodv | pc-aodv).
        #[arg(long)]
        protocol: Option<Protocol>,
        #[arg(long)]
        seed: Option<u64>,
        /// Writes the per-event trace, one tab-separated line per event.
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run both protocols over a seed range and append a delta row.
    Compare {
        #[arg(long)]
        scenario: PathBuf,
        /// Inclusive range `A..B`, or a single seed.
        #[arg(long, value_parser = parse_seeds)]
        seeds: SeedRange,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run both protocols for every node count and seed.
    Sweep {
        #[arg(long)]
        scenario: PathBuf,
        /// Comma-separated node counts, e.g. `10,20,30`.
        #[arg(long, value_delimiter = ',', required = true)]
        nodes: Vec<usize>,
        #[arg(long, value_parser = parse_seeds)]
        seeds: SeedRange,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone)]
struct SeedRange(Vec<u64>);

fn parse_seeds(s: &str) -> Result<SeedRange, String> {
    let bad = || format!("expected `A..B` or a single seed, got `{s}`");
    let (lo, hi) = match s.split_once("..") {
        Some((a, b)) => (
            a.trim().parse::<u64>().map_err(|_| bad())?,
            b.trim().parse::<u64>().map_err(|_| bad())?,
        ),
        None => {
            let v = s.trim().parse::<u64>().map_err(|_| bad())?;
            (v, v)
        }
    };
    if lo > hi {
        return Err(format!("empty seed range `{s}`"));
    }
    Ok(SeedRange((lo..=hi).collect()))
}

fn load(path: &Path) -> Result<ScenarioConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_scenario(&text).with_context(|| format!("parsing {}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn write_trace(path: &Path, trace: &[TraceRecord]) -> Result<()> {
    let mut w = create(path)?;
    for r in trace {
        writeln!(w, "{}", r.to_line())?;
    }
    w.flush()?;
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run {
            scenario,
            protocol,
            seed,
            trace,
            out,
        } => {
            let cfg = load(&scenario)?;
            let output = experiment::run(&cfg, protocol, seed, trace.is_some())?;
            let mut w = create(&out)?;
            emit_csv(&mut w, std::slice::from_ref(&output.record))?;
            w.flush()?;
            if let (Some(path), Some(t)) = (trace, output.trace) {
                write_trace(&path, &t)?;
            }
        }
        Command::Compare { scenario, seeds, out } => {
            let cfg = load(&scenario)?;
            let cmp = experiment::compare(&cfg, &seeds.0)?;
            let mut w = create(&out)?;
            cmp.write_csv(&mut w)?;
            w.flush()?;
        }
        Command::Sweep {
            scenario,
            nodes,
            seeds,
            out,
        } => {
            let cfg = load(&scenario)?;
            let records = experiment::sweep(&cfg, &nodes, &seeds.0)?;
            let mut w = create(&out)?;
            emit_csv(&mut w, &records)?;
            w.flush()?;
        }
    }
    Ok(())
}
