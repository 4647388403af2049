//! Command-line front end shared by simulation and analysis.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::analysis::pipeline::{self, AnalysisOptions, RunDir};
use crate::error::{Error, Result};
use crate::sim::{self, Condition, SimConfig};

#[derive(Debug, Parser)]
#[command(
    name = "cocreate",
    version,
    about = "Artifact co-creation simulator and analysis tools"
)]
#[command(arg_required_else_help = true)]
pub struct Cli {
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// error, warn, info, debug or trace.
    #[arg(long, global = true, default_value = "info")]
    pub log_level: String,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a simulation into a run directory.
    Simulate(SimulateArgs),
    /// Turn run directories into CSV tables.
    Analyze(AnalyzeArgs),
    /// Check a config file and report the first invalid key.
    ValidateConfig { path: PathBuf },
    /// Print the default configuration as TOML.
    PrintDefaultConfig,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// TOML config; omitted keys take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Run directory (with --seeds: parent of one `seed-<n>` directory per seed).
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, conflicts_with = "seeds")]
    pub seed: Option<u64>,
    /// Comma-separated seeds, run one after another.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    /// `with` or `without` creation.
    #[arg(long)]
    pub condition: Option<Condition>,
    #[arg(long)]
    pub steps: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum AnalysisKind {
    Wasserstein,
    GwMds,
    Rsa,
    Acceptance,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    pub kind: AnalysisKind,
    /// Run directories; RSA pools them by condition, the others process each.
    #[arg(long = "run", required = true, num_args = 1..)]
    pub runs: Vec<PathBuf>,
    /// Window length in steps (default: wasserstein 1000, gw-mds 100, acceptance 500).
    #[arg(long)]
    pub interval: Option<usize>,
    /// RSA moving-average window in steps.
    #[arg(long, default_value_t = 25)]
    pub window: usize,
    /// Output directory for the CSV files.
    #[arg(long)]
    pub out: PathBuf,
}

/// Parses `args` and runs the command.
pub fn main_with<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code().clamp(0, 255) as u8);
        }
    };
    let _ = env_logger::Builder::new()
        .parse_filters(&cli.log_level)
        .format_timestamp(None)
        .try_init();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn threads(cli: &Cli) -> usize {
    cli.threads
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .max(1)
}

fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Simulate(args) => simulate(args, threads(cli)),
        Command::Analyze(args) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads(cli))
                .build()
                .map_err(|e| Error::contract(format!("thread pool: {e}")))?;
            pool.install(|| analyze(args))
        }
        Command::ValidateConfig { path } => {
            load_config(path)?;
            println!("{}: ok", path.display());
            Ok(())
        }
        Command::PrintDefaultConfig => {
            print!("{}", SimConfig::default().to_toml());
            Ok(())
        }
    }
}

fn load_config(path: &Path) -> Result<SimConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    SimConfig::from_toml(&text)
}

/// Config file values, then explicit flags on top.
pub fn effective_config(args: &SimulateArgs) -> Result<SimConfig> {
    let mut cfg = match &args.config {
        Some(path) => load_config(path)?,
        None => SimConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(c) = args.condition {
        cfg.condition = c;
    }
    if let Some(t) = args.steps {
        cfg.steps = t;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn simulate(args: &SimulateArgs, threads: usize) -> Result<()> {
    let base = effective_config(args)?;
    let runs: Vec<(SimConfig, PathBuf)> = match &args.seeds {
        Some(seeds) => seeds
            .iter()
            .map(|&s| {
                (
                    SimConfig {
                        seed: s,
                        ..base.clone()
                    },
                    sim::seed_dir(&args.out, s),
                )
            })
            .collect(),
        None => vec![(base, args.out.clone())],
    };
    for (cfg, dir) in runs {
        log::info!(
            "seed {} ({}, {} steps) -> {}",
            cfg.seed,
            cfg.condition,
            cfg.steps,
            dir.display()
        );
        let summary = sim::run(&cfg, &dir, threads)?;
        log::info!("finished in {:.1} s", summary.wall_seconds);
    }
    Ok(())
}

fn analyze(args: &AnalyzeArgs) -> Result<()> {
    let runs = args.runs.iter().map(|p| RunDir::open(p)).collect::<Result<Vec<_>>>()?;
    let opts = AnalysisOptions::default();
    if args.kind == AnalysisKind::Rsa {
        let path = pipeline::write_rsa(&runs, args.window, &args.out)?;
        println!("{}", path.display());
        return Ok(());
    }
    for run in &runs {
        let out = if runs.len() == 1 {
            args.out.clone()
        } else {
            let name = run.path.file_name().map_or_else(|| "run".into(), |n| n.to_owned());
            args.out.join(name)
        };
        let written = match args.kind {
            AnalysisKind::Wasserstein => pipeline::write_wasserstein(run, args.interval.unwrap_or(1000), &opts, &out)?,
            AnalysisKind::GwMds => vec![pipeline::write_gw_mds(run, args.interval.unwrap_or(100), &opts, &out)?],
            AnalysisKind::Acceptance => vec![pipeline::write_acceptance(run, args.interval.unwrap_or(500), &out)?],
            AnalysisKind::Rsa => unreachable!("handled above"),
        };
        for p in written {
            println!("{}", p.display());
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> std::result::Result<Cli, clap::Error> {
        Cli::try_parse_from(std::iter::once("cocreate").chain(args.iter().copied()))
    }

    #[test]
    fn flags_override_config() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        fs::write(&path, "seed = 4\nsteps = 10\ncondition = \"with_creation\"\n").unwrap();
        let cli = parse(&[
            "simulate",
            "--config",
            path.to_str().unwrap(),
            "--out",
            "x",
            "--seed",
            "9",
            "--condition",
            "without",
        ])
        .unwrap();
        let Command::Simulate(args) = cli.command else { panic!() };
        let cfg = effective_config(&args).unwrap();
        assert_eq!(
            (cfg.seed, cfg.steps, cfg.condition),
            (9, 10, Condition::WithoutCreation)
        );
    }

    #[test]
    fn seed_list_and_unknown_flags() {
        let cli = parse(&["simulate", "--out", "x", "--seeds", "1,2,3"]).unwrap();
        let Command::Simulate(args) = cli.command else { panic!() };
        assert_eq!(args.seeds, Some(vec![1, 2, 3]));
        assert!(parse(&["simulate", "--out", "x", "--bogus"]).is_err());
        assert!(parse(&["simulate", "--out", "x", "--seed", "1", "--seeds", "2"]).is_err());
        assert!(parse(&["frobnicate"]).is_err());
    }

    #[test]
    fn analyze_kinds() {
        for kind in ["wasserstein", "gw-mds", "rsa", "acceptance"] {
            parse(&["analyze", kind, "--run", "a", "b", "--out", "o"]).unwrap();
        }
        assert!(parse(&["analyze", "pca", "--run", "a", "--out", "o"]).is_err());
        assert!(parse(&["analyze", "rsa", "--out", "o"]).is_err());
    }
}
