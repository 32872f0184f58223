use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use meshnc::coding::Protocol;
use meshnc::scenario::results::write_gains_csv;
use meshnc::scenario::{
    baselines_in, gain_table, parse_config, read_runs_csv, render_gain_table, run_sweep, summarize,
    write_runs_csv, write_summary_csv, ScenarioConfig, SweepResult, TopologyKind,
};

/// Packet-level XOR network coding simulator for wireless mesh networks.
#[derive(Parser)]
#[command(name = "meshnc", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
    /// Restrict runs to this seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for CSV output.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Parallel runs (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run every protocol and BER of a config once (first seed unless --seed).
    Run { config: String },
    /// Run the full protocol x BER x seed sweep and write runs, flows, summary and gains CSVs.
    Sweep { config: String },
    /// Recompute the gain table from a runs.csv.
    Gains { runs: PathBuf },
    /// Parse and validate a config without running it.
    Validate { config: String },
}

/// A config file path, or the name of a built-in scenario (x_topo, eight_node, grid5).
fn load_config(arg: &str) -> Result<ScenarioConfig> {
    let path = Path::new(arg);
    if !path.exists() {
        if let Ok(kind) = arg.parse::<TopologyKind>() {
            if kind != TopologyKind::Explicit(Vec::new()) {
                return Ok(ScenarioConfig::builtin(kind));
            }
        }
    }
    let text = fs::read_to_string(path).with_context(|| format!("reading {arg}"))?;
    parse_config(&text).with_context(|| format!("in {arg}"))
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    let path = dir.join(name);
    let f = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn write_outputs(res: &SweepResult, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let rows = res.run_rows();
    write_runs_csv(&rows, create(dir, "runs.csv")?)?;
    res.write_flows_csv(create(dir, "flows.csv")?)?;
    write_summary_csv(&summarize(&rows), create(dir, "summary.csv")?)?;
    if rows.iter().any(|r| r.protocol == Protocol::FlexOnc) && !baselines_in(&rows).is_empty() {
        write_gains_csv(
            &gain_table(&rows, &baselines_in(&rows))?,
            create(dir, "gains.csv")?,
        )?;
    }
    Ok(())
}

fn print_summary(res: &SweepResult) -> Result<()> {
    let rows = res.run_rows();
    let mut out = io::stdout().lock();
    writeln!(
        out,
        "{:<10} {:>8} {:>6} {:>14} {:>12} {:>8}",
        "protocol", "ber", "seeds", "mean_bps", "std_bps", "dups"
    )?;
    for s in summarize(&rows) {
        writeln!(
            out,
            "{:<10} {:>8e} {:>6} {:>14.1} {:>12.1} {:>8.1}",
            s.protocol.name(),
            s.ber,
            s.seeds,
            s.mean_bps,
            s.std_bps,
            s.dups_mean
        )?;
    }
    if rows.iter().any(|r| r.protocol == Protocol::FlexOnc) && !baselines_in(&rows).is_empty() {
        writeln!(out, "\nFlexONC gain over baselines")?;
        write!(
            out,
            "{}",
            render_gain_table(&gain_table(&rows, &baselines_in(&rows))?)
        )?;
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(&Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn execute(cli: &Cli) -> Result<()> {
    match &cli.cmd {
        Cmd::Run { config } => {
            let mut cfg = load_config(config)?;
            cfg.seeds = vec![cli.seed.unwrap_or(cfg.seeds[0])];
            let res = run_sweep(&cfg, cli.jobs)?;
            print_summary(&res)?;
            if let Some(dir) = &cli.out_dir {
                write_outputs(&res, dir)?;
            }
        }
        Cmd::Sweep { config } => {
            let mut cfg = load_config(config)?;
            if let Some(s) = cli.seed {
                cfg.seeds = vec![s];
            }
            let res = run_sweep(&cfg, cli.jobs)?;
            print_summary(&res)?;
            let dir = cli
                .out_dir
                .clone()
                .unwrap_or_else(|| PathBuf::from("results").join(&cfg.name));
            write_outputs(&res, &dir)?;
            eprintln!("wrote {}", dir.display());
        }
        Cmd::Gains { runs } => {
            let f = File::open(runs).with_context(|| format!("opening {}", runs.display()))?;
            let rows = read_runs_csv(f)?;
            let bases = baselines_in(&rows);
            if bases.is_empty() || !rows.iter().any(|r| r.protocol == Protocol::FlexOnc) {
                bail!("{} needs flexonc rows and at least one baseline", runs.display());
            }
            let gains = gain_table(&rows, &bases)?;
            match &cli.out_dir {
                Some(dir) => {
                    fs::create_dir_all(dir)?;
                    write_gains_csv(&gains, create(dir, "gains.csv")?)?;
                    print!("{}", render_gain_table(&gains));
                }
                None => write_gains_csv(&gains, io::stdout().lock())?,
            }
        }
        Cmd::Validate { config } => {
            let cfg = load_config(config)?;
            cfg.validate()?;
            let topo = cfg.topology()?;
            println!(
                "ok: {} ({} nodes, {} flows, {} cells)",
                cfg.name,
                topo.len(),
                cfg.flows.len(),
                meshnc::scenario::cells(&cfg).len()
            );
        }
    }
    Ok(())
}
