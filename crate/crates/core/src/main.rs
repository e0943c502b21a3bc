use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;

use pilotwave::experiment::{self, Experiment, GridSpec, Manifest, Settings, TimePattern};
use pilotwave::report;
use pilotwave::Error;

/// Quantum versus Bohmian sign correlators for particles in a box.
///
/// Results go to stdout as CSV unless --out is given, in which case a
/// `<out>.manifest` file is written alongside. Flags override values read
/// from --config.
#[derive(Debug, Parser)]
#[command(name = "pilotwave", version)]
struct Cli {
    /// Experiment to run (may instead come from --config).
    #[arg(value_enum)]
    experiment: Option<Experiment>,

    /// Number of trajectories.
    #[arg(long)]
    count: Option<usize>,

    /// Master seed; required by every Monte Carlo experiment.
    #[arg(long)]
    seed: Option<u64>,

    /// Time grid as start:stop:points, e.g. 0:2pi/9:12.
    #[arg(long, value_parser = parse_grid)]
    grid: Option<GridSpec>,

    /// Readout times for analytic-sweep.
    #[arg(long, value_enum)]
    pattern: Option<TimePattern>,

    /// Mode cutoff of the collapsed states.
    #[arg(long)]
    cutoff: Option<u32>,

    #[arg(long)]
    rel_tol: Option<f64>,

    #[arg(long)]
    abs_tol: Option<f64>,

    /// Worker threads (0 = all cores, 1 = serial).
    #[arg(long)]
    threads: Option<usize>,

    /// CSV output path.
    #[arg(long)]
    out: Option<PathBuf>,

    /// SVG plot output path.
    #[arg(long)]
    svg: Option<PathBuf>,

    /// key = value configuration file; a run manifest works too.
    #[arg(long)]
    config: Option<PathBuf>,
}

fn parse_grid(s: &str) -> Result<GridSpec, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

impl Cli {
    fn settings(&self) -> Settings {
        Settings {
            experiment: self.experiment,
            count: self.count,
            seed: self.seed,
            grid: self.grid.clone(),
            pattern: self.pattern,
            cutoff: self.cutoff,
            rel_tol: self.rel_tol,
            abs_tol: self.abs_tol,
            threads: self.threads,
            out: self.out.clone(),
            svg: self.svg.clone(),
        }
    }
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::InvalidArgument(_) | Error::Parse(_) => 1,
        Error::Io { .. } => 3,
        _ => 2,
    }
}

fn execute(cli: Cli) -> pilotwave::Result<()> {
    let base = match &cli.config {
        Some(path) => Settings::load(path)?,
        None => Settings::default(),
    };
    let config = base.overlay(cli.settings()).resolve()?;
    let result = experiment::run(&config)?;

    match &config.out {
        Some(path) => {
            report::emit_csv(&result.rows, path)?;
            let manifest_path = Manifest::path_for(path);
            result.manifest.write(&manifest_path)?;
        }
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            report::write_csv(&result.rows, &mut lock)
                .and_then(|_| lock.flush())
                .map_err(|e| Error::Io { path: PathBuf::from("<stdout>"), source: e })?;
        }
    }
    if let Some(path) = &config.svg {
        report::emit_svg(&result.rows, config.title(), path)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let _ = err.print();
            return match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("pilotwave: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
