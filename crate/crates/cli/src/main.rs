use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{Parser, Subcommand};
use mqc_cli::commands;
use mqc_cli::config::{Format, RunConfig};
use mqc_cli::output::Sink;

#[derive(Parser)]
#[command(name = "mqc", version, about = "Multiple-quantum coherence spectra of dilute alkali vapours")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML run configuration.
    #[arg(long, global = true, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in configuration: fig2, fig3, tableII, fig4, validate-small.
    #[arg(long, global = true)]
    preset: Option<String>,
    /// Output directory (overrides output.dir).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Output format; repeat for several (overrides output.formats).
    #[arg(long, global = true, value_enum)]
    format: Vec<Format>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// 1QC and 2QC spectra for x and y polarisation, with the peak table.
    Spectrum,
    /// Peak-resolved polarisation anisotropy for several interaction modes.
    Anisotropy,
    /// Vapour-cell estimates: pulse area, velocity classes, collisions, Doppler width.
    Estimate,
    /// Angular distribution of spontaneous emission.
    EmissionPattern,
    /// Cross-check the engine against the brute-force lock-in simulation.
    Validate,
}

fn load(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match (&cli.config, &cli.preset) {
        (Some(p), _) => RunConfig::load(p)?,
        (None, Some(name)) => RunConfig::parse(mqc_cli::config::preset(name)?)?,
        (None, None) => bail!("pass --config PATH or --preset NAME"),
    };
    if let Some(d) = &cli.out {
        cfg.output.dir = d.to_string_lossy().into_owned();
    }
    if !cli.format.is_empty() {
        cfg.output.formats = cli.format.clone();
    }
    if cli.seed.is_some() {
        cfg.seed = cli.seed;
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<bool> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let cfg = load(cli)?;
    let mut sink = Sink::new(&cfg)?;
    let ok = match cli.command {
        Command::Spectrum => commands::spectrum(&cfg, &mut sink).map(|_| true)?,
        Command::Anisotropy => commands::anisotropy_cmd(&cfg, &mut sink).map(|_| true)?,
        Command::Estimate => commands::estimate(&cfg, &mut sink).map(|_| true)?,
        Command::EmissionPattern => commands::emission(&cfg, &mut sink).map(|_| true)?,
        Command::Validate => commands::validate(&cfg, &mut sink)?.0,
    };
    for p in &sink.written {
        eprintln!("wrote {}", p.display());
    }
    Ok(ok)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
