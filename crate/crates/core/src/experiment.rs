//! Named experiments, their configuration, and the run manifest.
//!
//! A configuration is a flat `key = value` text (see [`Settings`]); the same
//! format is used for the manifest written next to each result, so a manifest
//! can be fed back in to reproduce a run.

use std::f64::consts::PI;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use clap::ValueEnum;

use crate::bohm::{Ensemble, IntegratorConfig};
use crate::collapse::{collapsed_two_time_ensemble, DEFAULT_CUTOFF, MIN_ENSEMBLE_CUTOFF};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::observables::{multitime_correlator, CorrelatorQuery, Observable, Side};
use crate::report::Row;
use crate::spectral::{make_fr, make_ghz, BoxState};
use crate::stats::Estimate;

pub const DEFAULT_COUNT: usize = 1000;
pub const MIN_COUNT: usize = 100;

/// Readout time of the two-particle experiment: a quarter period of the
/// level spacing, where the quoted probabilities are attained.
pub const FR_READOUT_TIME: f64 = PI / 6.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Experiment {
    /// Quantum GHZ correlator only, no trajectories.
    AnalyticSweep,
    /// Three readouts at the same time t.
    EqualTimes,
    /// Particle 1 at time 0, particles 2 and 3 at time t.
    TwoTimes,
    /// As two-times, with the state collapsed after the first readout.
    CollapseTwoTimes,
    /// Two-particle projector probabilities.
    Fr,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::AnalyticSweep => "analytic-sweep",
            Experiment::EqualTimes => "equal-times",
            Experiment::TwoTimes => "two-times",
            Experiment::CollapseTwoTimes => "collapse-two-times",
            Experiment::Fr => "fr",
        }
    }

    pub fn is_monte_carlo(self) -> bool {
        self != Experiment::AnalyticSweep
    }

    pub fn default_grid(self) -> GridSpec {
        let text = match self {
            Experiment::AnalyticSweep | Experiment::EqualTimes => "0:2pi/9:12",
            _ => "0:pi/3:13",
        };
        text.parse().expect("built-in grid")
    }

    fn title(self) -> &'static str {
        match self {
            Experiment::AnalyticSweep => "GHZ sign correlator",
            Experiment::EqualTimes => "GHZ equal-time correlator",
            Experiment::TwoTimes => "GHZ two-time correlator",
            Experiment::CollapseTwoTimes => "GHZ two-time correlator with collapse",
            Experiment::Fr => "P-(q1(t)) P+(q2(0))",
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Experiment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        <Experiment as ValueEnum>::from_str(s, false)
            .map_err(|_| Error::Parse(format!("unknown experiment '{s}'")))
    }
}

/// Readout times of the three particles as a function of the grid variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TimePattern {
    /// (t, t, t)
    Equal,
    /// (0, t, t)
    TwoTimes,
    /// (t, 0, 0)
    OneTime,
}

impl TimePattern {
    pub fn times(self, t: f64) -> [f64; 3] {
        match self {
            TimePattern::Equal => [t, t, t],
            TimePattern::TwoTimes => [0.0, t, t],
            TimePattern::OneTime => [t, 0.0, 0.0],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TimePattern::Equal => "equal",
            TimePattern::TwoTimes => "two-times",
            TimePattern::OneTime => "one-time",
        }
    }
}

impl FromStr for TimePattern {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        <TimePattern as ValueEnum>::from_str(s, false)
            .map_err(|_| Error::Parse(format!("unknown time pattern '{s}'")))
    }
}

/// Evenly spaced grid `start:stop:points`, both ends included. Ends accept
/// plain numbers or multiples of pi such as `2pi/9`, `-pi/6`, `0.5*pi`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub start: f64,
    pub stop: f64,
    pub points: usize,
    text: String,
}

impl GridSpec {
    pub fn new(start: f64, stop: f64, points: usize) -> Result<GridSpec> {
        let text = format!("{start}:{stop}:{points}");
        GridSpec::checked(start, stop, points, text)
    }

    fn checked(start: f64, stop: f64, points: usize, text: String) -> Result<GridSpec> {
        if points < 2 {
            return Err(Error::InvalidArgument(format!("grid needs at least 2 points, got {points}")));
        }
        if !(start.is_finite() && stop.is_finite() && stop > start) {
            return Err(Error::InvalidArgument(format!("grid needs finite start < stop, got {text}")));
        }
        Ok(GridSpec { start, stop, points, text })
    }

    pub fn values(&self) -> Vec<f64> {
        let span = self.stop - self.start;
        let last = self.points - 1;
        (0..self.points)
            .map(|i| if i == last { self.stop } else { self.start + span * i as f64 / last as f64 })
            .collect()
    }
}

impl fmt::Display for GridSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text)
    }
}

impl FromStr for GridSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').map(str::trim).collect();
        let [start, stop, points] = parts.as_slice() else {
            return Err(Error::Parse(format!("grid '{s}' is not start:stop:points")));
        };
        let points = points
            .parse::<usize>()
            .map_err(|_| Error::Parse(format!("grid point count '{points}' is not an integer")))?;
        GridSpec::checked(parse_time(start)?, parse_time(stop)?, points, s.trim().to_string())
    }
}

/// Parses `1.5`, `pi`, `-pi/6`, `2pi/9`, `2*pi/9`, `0.25pi`.
pub fn parse_time(text: &str) -> Result<f64> {
    let bad = || Error::Parse(format!("cannot read time '{text}'"));
    let s = text.trim();
    let (numerator, denominator) = match s.split_once('/') {
        Some((n, d)) => (n.trim(), Some(d.trim())),
        None => (s, None),
    };
    let value = match numerator.strip_suffix("pi") {
        Some(factor) => {
            let factor = factor.trim().trim_end_matches('*').trim();
            let factor = match factor {
                "" | "+" => 1.0,
                "-" => -1.0,
                f => f.parse::<f64>().map_err(|_| bad())?,
            };
            factor * PI
        }
        None => numerator.parse::<f64>().map_err(|_| bad())?,
    };
    let value = match denominator {
        Some(d) => {
            let d = d.parse::<f64>().map_err(|_| bad())?;
            if d == 0.0 {
                return Err(bad());
            }
            value / d
        }
        None => value,
    };
    if !value.is_finite() {
        return Err(bad());
    }
    Ok(value)
}

/// Partially specified configuration, as read from a config file, a
/// manifest, or the command line. Later layers override earlier ones via
/// [`Settings::overlay`].
///
/// Keys: `experiment`, `count`, `seed`, `grid`, `pattern`, `cutoff`,
/// `rel_tol`, `abs_tol`, `threads`, `out`, `svg`. Lines starting with `#`
/// are comments. `version`, `wall_time_s` and `diag.*` entries written into
/// manifests are ignored on input.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Settings {
    pub experiment: Option<Experiment>,
    pub count: Option<usize>,
    pub seed: Option<u64>,
    pub grid: Option<GridSpec>,
    pub pattern: Option<TimePattern>,
    pub cutoff: Option<u32>,
    pub rel_tol: Option<f64>,
    pub abs_tol: Option<f64>,
    pub threads: Option<usize>,
    pub out: Option<PathBuf>,
    pub svg: Option<PathBuf>,
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::Parse(format!("bad value for {key}: '{value}'")))
}

impl Settings {
    pub fn parse(text: &str) -> Result<Settings> {
        let mut s = Settings::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Parse(format!("line {}: expected key = value", lineno + 1)));
            };
            let (key, value) = (key.trim(), value.trim());
            match key {
                "experiment" => s.experiment = Some(value.parse()?),
                "count" => s.count = Some(parse_value(key, value)?),
                "seed" => s.seed = Some(parse_value(key, value)?),
                "grid" => s.grid = Some(value.parse()?),
                "pattern" => s.pattern = Some(value.parse()?),
                "cutoff" => s.cutoff = Some(parse_value(key, value)?),
                "rel_tol" => s.rel_tol = Some(parse_value(key, value)?),
                "abs_tol" => s.abs_tol = Some(parse_value(key, value)?),
                "threads" => s.threads = Some(parse_value(key, value)?),
                "out" => s.out = Some(PathBuf::from(value)),
                "svg" => s.svg = Some(PathBuf::from(value)),
                "version" | "wall_time_s" => {}
                k if k.starts_with("diag.") => {}
                other => return Err(Error::Parse(format!("line {}: unknown key '{other}'", lineno + 1))),
            }
        }
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Settings> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Settings::parse(&text)
    }

    /// Fields set in `top` win.
    pub fn overlay(self, top: Settings) -> Settings {
        Settings {
            experiment: top.experiment.or(self.experiment),
            count: top.count.or(self.count),
            seed: top.seed.or(self.seed),
            grid: top.grid.or(self.grid),
            pattern: top.pattern.or(self.pattern),
            cutoff: top.cutoff.or(self.cutoff),
            rel_tol: top.rel_tol.or(self.rel_tol),
            abs_tol: top.abs_tol.or(self.abs_tol),
            threads: top.threads.or(self.threads),
            out: top.out.or(self.out),
            svg: top.svg.or(self.svg),
        }
    }

    pub fn resolve(self) -> Result<ExperimentConfig> {
        let experiment =
            self.experiment.ok_or_else(|| Error::InvalidArgument("no experiment given".into()))?;
        if experiment.is_monte_carlo() && self.seed.is_none() {
            return Err(Error::InvalidArgument(format!("{experiment} needs an explicit seed")));
        }
        if self.pattern.is_some() && experiment != Experiment::AnalyticSweep {
            return Err(Error::InvalidArgument(format!(
                "pattern applies to analytic-sweep only; {experiment} fixes its own readout times"
            )));
        }
        let dims = if experiment == Experiment::Fr { 2 } else { 3 };
        let defaults = IntegratorConfig::default_for(dims);
        let config = ExperimentConfig {
            experiment,
            count: self.count.unwrap_or(DEFAULT_COUNT),
            seed: self.seed,
            grid: self.grid.unwrap_or_else(|| experiment.default_grid()),
            pattern: self.pattern.unwrap_or(TimePattern::Equal),
            cutoff: self.cutoff.unwrap_or(DEFAULT_CUTOFF),
            rel_tol: self.rel_tol.unwrap_or(defaults.rel_tol),
            abs_tol: self.abs_tol.unwrap_or(defaults.abs_tol),
            threads: self.threads.unwrap_or(0),
            out: self.out,
            svg: self.svg,
        };
        config.validate()?;
        Ok(config)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub count: usize,
    pub seed: Option<u64>,
    pub grid: GridSpec,
    /// Used by `analytic-sweep` only.
    pub pattern: TimePattern,
    pub cutoff: u32,
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Worker threads; 0 picks the pool default, 1 runs serially.
    pub threads: usize,
    pub out: Option<PathBuf>,
    pub svg: Option<PathBuf>,
}

impl ExperimentConfig {
    /// Configuration with every default filled in.
    pub fn new(experiment: Experiment, seed: Option<u64>) -> Result<ExperimentConfig> {
        Settings { experiment: Some(experiment), seed, ..Settings::default() }.resolve()
    }

    pub fn validate(&self) -> Result<()> {
        if self.count < MIN_COUNT {
            return Err(Error::InvalidArgument(format!(
                "count must be at least {MIN_COUNT}, got {}",
                self.count
            )));
        }
        if self.experiment.is_monte_carlo() && self.grid.start < 0.0 {
            return Err(Error::InvalidArgument("trajectory grids cannot start before t = 0".into()));
        }
        if self.experiment == Experiment::CollapseTwoTimes && self.cutoff < MIN_ENSEMBLE_CUTOFF {
            return Err(Error::InvalidArgument(format!(
                "cutoff must be at least {MIN_ENSEMBLE_CUTOFF}, got {}",
                self.cutoff
            )));
        }
        self.integrator().validate()
    }

    pub fn integrator(&self) -> IntegratorConfig {
        let dims = if self.experiment == Experiment::Fr { 2 } else { 3 };
        IntegratorConfig {
            rel_tol: self.rel_tol,
            abs_tol: self.abs_tol,
            ..IntegratorConfig::default_for(dims)
        }
    }

    fn execution(&self) -> Execution {
        if self.threads == 1 {
            Execution::Serial
        } else {
            Execution::Parallel
        }
    }

    fn seed(&self) -> Result<u64> {
        self.seed.ok_or_else(|| Error::InvalidArgument(format!("{} needs an explicit seed", self.experiment)))
    }

    /// Key = value lines accepted by [`Settings::parse`].
    pub fn to_settings_text(&self) -> String {
        let mut lines = vec![format!("experiment = {}", self.experiment), format!("count = {}", self.count)];
        if let Some(seed) = self.seed {
            lines.push(format!("seed = {seed}"));
        }
        lines.push(format!("grid = {}", self.grid));
        if self.experiment == Experiment::AnalyticSweep {
            lines.push(format!("pattern = {}", self.pattern.name()));
        }
        lines.push(format!("cutoff = {}", self.cutoff));
        lines.push(format!("rel_tol = {:e}", self.rel_tol));
        lines.push(format!("abs_tol = {:e}", self.abs_tol));
        lines.push(format!("threads = {}", self.threads));
        if let Some(out) = &self.out {
            lines.push(format!("out = {}", out.display()));
        }
        if let Some(svg) = &self.svg {
            lines.push(format!("svg = {}", svg.display()));
        }
        let mut text = lines.join("\n");
        text.push('\n');
        text
    }

    pub fn title(&self) -> &'static str {
        self.experiment.title()
    }
}

/// Configuration echo plus the facts that do not feed back into a rerun.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub config: ExperimentConfig,
    pub version: String,
    pub wall_time_s: f64,
    pub diagnostics: Vec<(String, String)>,
}

impl Manifest {
    pub fn render(&self) -> String {
        let mut text = String::from("# pilotwave run manifest\n");
        text.push_str(&self.config.to_settings_text());
        text.push_str(&format!("version = {}\n", self.version));
        text.push_str(&format!("wall_time_s = {:.3}\n", self.wall_time_s));
        for (key, value) in &self.diagnostics {
            text.push_str(&format!("diag.{key} = {value}\n"));
        }
        text
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.render()).map_err(|e| Error::io(path, e))
    }

    /// Sidecar path for the manifest of a CSV written to `csv`.
    pub fn path_for(csv: &Path) -> PathBuf {
        let mut name = csv.as_os_str().to_owned();
        name.push(".manifest");
        PathBuf::from(name)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub rows: Vec<Row>,
    pub manifest: Manifest,
}

/// Runs the configured experiment on the configured number of workers.
pub fn run(config: &ExperimentConfig) -> Result<RunResult> {
    config.validate()?;
    let started = Instant::now();
    let (rows, diagnostics) = Execution::with_threads(config.threads, || match config.experiment {
        Experiment::AnalyticSweep => run_analytic_sweep(config),
        Experiment::EqualTimes => run_equal_times(config),
        Experiment::TwoTimes => run_two_times(config),
        Experiment::CollapseTwoTimes => run_collapse_two_times(config),
        Experiment::Fr => run_fr(config),
    })?;
    Ok(RunResult {
        rows,
        manifest: Manifest {
            config: config.clone(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            wall_time_s: started.elapsed().as_secs_f64(),
            diagnostics,
        },
    })
}

type Table = (Vec<Row>, Vec<(String, String)>);

fn ghz_signs(times: [f64; 3]) -> Result<f64> {
    multitime_correlator(&make_ghz(), &CorrelatorQuery::signs(&times))
}

fn ensemble_row(t: f64, quantum: f64, est: Estimate, ensemble_count: usize) -> Row {
    Row {
        t,
        quantum,
        bohm_mean: est.mean,
        bohm_stderr: est.stderr,
        n_effective: est.n,
        n_failed: ensemble_count - est.n,
    }
}

fn ensemble_diagnostics(ensemble: &Ensemble) -> Vec<(String, String)> {
    let (accepted, rejected) = ensemble
        .trajectories
        .iter()
        .fold((0, 0), |(a, r), tr| (a + tr.stats.accepted, r + tr.stats.rejected));
    vec![
        ("failures".into(), ensemble.failures().to_string()),
        ("node_rescued".into(), ensemble.node_rescued().to_string()),
        ("accepted_steps".into(), accepted.to_string()),
        ("rejected_steps".into(), rejected.to_string()),
        ("envelope_bound".into(), format!("{:e}", ensemble.batch.envelope_bound)),
    ]
}

/// Quantum GHZ sign correlator along the configured time pattern.
pub fn run_analytic_sweep(config: &ExperimentConfig) -> Result<Table> {
    let rows = config
        .grid
        .values()
        .into_iter()
        .map(|t| Ok(Row::analytic(t, ghz_signs(config.pattern.times(t))?)))
        .collect::<Result<Vec<_>>>()?;
    Ok((rows, Vec::new()))
}

fn run_pattern_ensemble(config: &ExperimentConfig, pattern: TimePattern) -> Result<Table> {
    let ghz = make_ghz();
    let grid = config.grid.values();
    let ensemble = Ensemble::run(
        &ghz,
        0.0,
        &grid,
        config.count,
        config.seed()?,
        &config.integrator(),
        config.execution(),
    )?;
    ensemble.check_failures()?;
    let rows = grid
        .iter()
        .map(|&t| {
            let times = pattern.times(t);
            Ok(ensemble_row(t, ghz_signs(times)?, ensemble.sign_product(&times), ensemble.count()))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((rows, ensemble_diagnostics(&ensemble)))
}

/// Bohmian ensemble against the quantum correlator at (t, t, t).
pub fn run_equal_times(config: &ExperimentConfig) -> Result<Table> {
    run_pattern_ensemble(config, TimePattern::Equal)
}

/// Bohmian ensemble against the quantum correlator at (0, t, t).
pub fn run_two_times(config: &ExperimentConfig) -> Result<Table> {
    run_pattern_ensemble(config, TimePattern::TwoTimes)
}

/// Particle 1 read at t = 0 with collapse, then particles 2 and 3 at t.
pub fn run_collapse_two_times(config: &ExperimentConfig) -> Result<Table> {
    let grid = config.grid.values();
    let run = collapsed_two_time_ensemble(
        config.count,
        &grid,
        config.cutoff,
        config.seed()?,
        &config.integrator(),
        config.execution(),
    )?;
    let rows = grid
        .iter()
        .zip(&run.estimates)
        .map(|(&t, est)| Ok(ensemble_row(t, ghz_signs([0.0, t, t])?, *est, run.count)))
        .collect::<Result<Vec<_>>>()?;
    let plus = run.collapsed_for(Side::Plus);
    let minus = run.collapsed_for(Side::Minus);
    let diagnostics = vec![
        ("failures".into(), run.failures.to_string()),
        ("plus_fraction".into(), format!("{:e}", run.plus_fraction)),
        ("node_rescue_fraction".into(), format!("{:e}", run.node_rescue_fraction)),
        ("retained_plus".into(), format!("{:e}", plus.retained)),
        ("retained_minus".into(), format!("{:e}", minus.retained)),
        ("weight_plus".into(), format!("{:e}", plus.weight)),
        ("weight_minus".into(), format!("{:e}", minus.weight)),
    ];
    Ok((rows, diagnostics))
}

/// State whose forward evolution realizes the quoted two-particle
/// probabilities at [`FR_READOUT_TIME`].
pub fn fr_state() -> BoxState {
    make_fr().time_reversed()
}

/// Projector readouts reported by `fr`, in row order: the three quoted
/// probabilities at the readout time, then both-right at t = 0.
pub fn fr_fixed_queries() -> [(f64, [(Observable, f64); 2]); 4] {
    let t = FR_READOUT_TIME;
    let plus = Observable::Half(Side::Plus);
    let minus = Observable::Half(Side::Minus);
    [
        (t, [(minus, t), (plus, 0.0)]),
        (t, [(plus, t), (plus, t)]),
        (t, [(plus, 0.0), (minus, t)]),
        (0.0, [(plus, 0.0), (plus, 0.0)]),
    ]
}

/// Four fixed rows (see [`fr_fixed_queries`]) followed by the sweep of
/// `P-(q1(t)) P+(q2(0))` over the grid. Every row is estimated from one
/// ensemble of unmeasured trajectories.
pub fn run_fr(config: &ExperimentConfig) -> Result<Table> {
    let state = fr_state();
    let grid = config.grid.values();
    let mut times = grid.clone();
    times.push(FR_READOUT_TIME);
    let ensemble = Ensemble::run(
        &state,
        0.0,
        &times,
        config.count,
        config.seed()?,
        &config.integrator(),
        config.execution(),
    )?;
    ensemble.check_failures()?;
    let row = |t: f64, factors: Vec<(Observable, f64)>| -> Result<Row> {
        let est = ensemble.product_estimate(&factors);
        let quantum = multitime_correlator(&state, &CorrelatorQuery::new(factors))?;
        Ok(ensemble_row(t, quantum, est, ensemble.count()))
    };
    let mut rows = Vec::with_capacity(4 + grid.len());
    for (t, factors) in fr_fixed_queries() {
        rows.push(row(t, factors.to_vec())?);
    }
    for &t in &grid {
        rows.push(row(t, vec![(Observable::Half(Side::Minus), t), (Observable::Half(Side::Plus), 0.0)])?);
    }
    Ok((rows, ensemble_diagnostics(&ensemble)))
}
