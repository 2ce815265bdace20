//! Command-line and config-file parsing.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Parser, ValueEnum};
use collapse_walk::bell::{Convention, ModelTag, QuadratureMethod};
use collapse_walk::QuantumState;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_SEED: u64 = 0;
pub const DEFAULT_TRIALS: u64 = 100_000;
pub const DEFAULT_SAMPLES: u64 = 1_000_000;
pub const DEFAULT_RESOLUTION: u64 = 1000;
pub const DEFAULT_DIFFUSION: f64 = 1.0;
pub const DEFAULT_POINTS: u64 = 101;
/// Environment variable capping the worker-thread count.
pub const THREADS_ENV: &str = "COLLAPSE_WALK_THREADS";

#[derive(Debug, Clone, PartialEq, Error)]
#[error("{flag}: {message}")]
pub struct UsageError {
    /// Offending flag, e.g. `--settings`.
    pub flag: String,
    pub message: String,
}

impl UsageError {
    pub fn new(flag: &str, message: impl Into<String>) -> Self {
        Self { flag: flag.to_string(), message: message.into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Winner frequencies of repeated walks.
    Born,
    /// One walk trajectory.
    Walk,
    /// Laplace-domain Green's function over an x grid.
    Greens,
    /// Correlation curve C(θ) for one model.
    Bell,
    /// CHSH and three-setting inequalities at four coplanar settings.
    Chsh,
    /// Image-model constant c₂ over a θ grid.
    C2,
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.to_possible_value().expect("no skipped variants").get_name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Format {
    Csv,
    Json,
}

/// Inclusive angle grid `start:stop:step` in degrees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThetaGrid {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl ThetaGrid {
    pub fn degrees(&self) -> Vec<f64> {
        let span = (self.stop - self.start) / self.step;
        let count = if (span - span.round()).abs() < 1e-9 { span.round() } else { span.floor() } as u64;
        (0..=count).map(|i| self.start + i as f64 * self.step).collect()
    }
}

impl FromStr for ThetaGrid {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(':').collect();
        let [start, stop, step] = parts.as_slice() else {
            return Err(format!("expected start:stop:step, got {s:?}"));
        };
        let num = |t: &str| t.trim().parse::<f64>().map_err(|_| format!("{t:?} is not a number"));
        let grid = ThetaGrid { start: num(start)?, stop: num(stop)?, step: num(step)? };
        if !(grid.step > 0.0) {
            return Err("step must be positive".into());
        }
        if !(0.0..=180.0).contains(&grid.start) || !(grid.start..=180.0).contains(&grid.stop) {
            return Err("angles must satisfy 0 ≤ start ≤ stop ≤ 180".into());
        }
        Ok(grid)
    }
}

impl fmt::Display for ThetaGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.start, self.stop, self.step)
    }
}

impl Serialize for ThetaGrid {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ThetaGrid {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Parser)]
#[command(name = "collapse-walk", version, about = "Walk-model and Bell-correlation experiments")]
pub struct Cli {
    /// Experiment to run; may come from --config instead.
    #[arg(value_enum)]
    pub command: Option<Command>,
    /// JSON config file, or a run manifest whose `config` is reused.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Draw the seed from the OS; the drawn value is recorded in the manifest.
    #[arg(long)]
    pub entropy: bool,
    #[arg(long)]
    pub trials: Option<u64>,
    #[arg(long)]
    pub samples: Option<u64>,
    /// Grid resolution M (walk units on the simplex).
    #[arg(long)]
    pub grid_resolution: Option<u64>,
    /// Step cap per walk (default 100·M²).
    #[arg(long)]
    pub max_steps: Option<u64>,
    /// Amplitudes "re,im;re,im;...".
    #[arg(long, allow_hyphen_values = true)]
    pub amplitudes: Option<String>,
    /// quantum | bell-sign | image-analytic | image-event
    #[arg(long)]
    pub model: Option<String>,
    /// start:stop:step in degrees, inclusive.
    #[arg(long)]
    pub theta_grid: Option<String>,
    /// a,a',b,b' in degrees (coplanar).
    #[arg(long, allow_hyphen_values = true)]
    pub settings: Option<String>,
    /// image (+cos θ) | quantum (−cos θ); image models only.
    #[arg(long)]
    pub convention: Option<String>,
    /// quadrature | mc; image-analytic only.
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long)]
    pub x0: Option<f64>,
    #[arg(long)]
    pub s: Option<f64>,
    #[arg(long)]
    pub diffusion: Option<f64>,
    /// Number of x grid points for greens.
    #[arg(long)]
    pub points: Option<u64>,
    /// Result file; stdout when absent.
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    /// Worker-thread cap.
    #[arg(long)]
    pub threads: Option<usize>,
}

/// Fully resolved run configuration; echoed verbatim in the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: Command,
    pub seed: u64,
    /// The seed was drawn from OS entropy rather than given.
    #[serde(skip)]
    pub seed_from_entropy: bool,
    pub trials: u64,
    pub samples: u64,
    pub grid_resolution: u64,
    pub max_steps: Option<u64>,
    pub amplitudes: Option<String>,
    pub model: Option<ModelTag>,
    pub theta_grid: Option<ThetaGrid>,
    pub settings: Option<[f64; 4]>,
    pub convention: Convention,
    pub method: QuadratureMethod,
    pub x0: Option<f64>,
    pub s: Option<f64>,
    pub diffusion: f64,
    pub points: u64,
    pub output: Option<PathBuf>,
    pub format: Format,
    pub threads: Option<usize>,
}

/// Config-file contents; every field optional.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub command: Option<Command>,
    pub seed: Option<u64>,
    pub trials: Option<u64>,
    pub samples: Option<u64>,
    pub grid_resolution: Option<u64>,
    pub max_steps: Option<u64>,
    pub amplitudes: Option<String>,
    pub model: Option<String>,
    pub theta_grid: Option<String>,
    pub settings: Option<Vec<f64>>,
    pub convention: Option<String>,
    pub method: Option<String>,
    pub x0: Option<f64>,
    pub s: Option<f64>,
    pub diffusion: Option<f64>,
    pub points: Option<u64>,
    pub output: Option<PathBuf>,
    pub format: Option<Format>,
    pub threads: Option<usize>,
}

impl FileConfig {
    /// Reads a config file; a manifest's `config` object is accepted too.
    pub fn load(path: &Path) -> Result<Self, UsageError> {
        let err = |m: String| UsageError::new("--config", format!("{}: {m}", path.display()));
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let mut value: serde_json::Value = serde_json::from_str(&text).map_err(|e| err(e.to_string()))?;
        if let Some(inner) = value.get_mut("config") {
            value = inner.take();
        }
        serde_json::from_value(value).map_err(|e| err(e.to_string()))
    }
}

fn parse_settings(s: &str) -> Result<Vec<f64>, UsageError> {
    s.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| UsageError::new("--settings", format!("{t:?} is not a number"))))
        .collect()
}

fn positive(flag: &str, value: u64) -> Result<u64, UsageError> {
    if value == 0 {
        return Err(UsageError::new(flag, "must be at least 1"));
    }
    Ok(value)
}

fn required<T>(flag: &str, command: Command, value: Option<T>) -> Result<T, UsageError> {
    value.ok_or_else(|| UsageError::new(flag, format!("required by `{command}`")))
}

/// Merges command-line flags over an optional config file. Flags win.
pub fn resolve(cli: Cli) -> Result<RunConfig, UsageError> {
    let file = match &cli.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    let command = cli
        .command
        .or(file.command)
        .ok_or_else(|| UsageError::new("<command>", "missing subcommand (born, walk, greens, bell, chsh or c2)"))?;

    let seed = if cli.entropy { rand::random::<u64>() } else { cli.seed.or(file.seed).unwrap_or(DEFAULT_SEED) };
    let trials = positive("--trials", cli.trials.or(file.trials).unwrap_or(DEFAULT_TRIALS))?;
    let samples = positive("--samples", cli.samples.or(file.samples).unwrap_or(DEFAULT_SAMPLES))?;
    let grid_resolution = cli.grid_resolution.or(file.grid_resolution).unwrap_or(DEFAULT_RESOLUTION);
    if grid_resolution < 2 {
        return Err(UsageError::new("--grid-resolution", "must be at least 2"));
    }
    let max_steps = cli.max_steps.or(file.max_steps).map(|m| positive("--max-steps", m)).transpose()?;
    let threads = cli.threads.or(file.threads);
    if threads == Some(0) {
        return Err(UsageError::new("--threads", "must be at least 1"));
    }

    let amplitudes = cli.amplitudes.or(file.amplitudes);
    if let Some(a) = &amplitudes {
        QuantumState::from_str(a).map_err(|e| UsageError::new("--amplitudes", e.to_string()))?;
    }
    let model = cli
        .model
        .or(file.model)
        .map(|m| m.parse::<ModelTag>().map_err(|e| UsageError::new("--model", e.to_string())))
        .transpose()?;
    let theta_grid = cli
        .theta_grid
        .or(file.theta_grid)
        .map(|g| g.parse::<ThetaGrid>().map_err(|e| UsageError::new("--theta-grid", e)))
        .transpose()?;
    let settings = match (cli.settings, file.settings) {
        (Some(s), _) => Some(parse_settings(&s)?),
        (None, s) => s,
    };
    let settings = settings
        .map(|s| {
            <[f64; 4]>::try_from(s.as_slice())
                .map_err(|_| UsageError::new("--settings", format!("expected 4 angles a,a',b,b', got {}", s.len())))
        })
        .transpose()?;
    if settings.is_some_and(|s| s.iter().any(|x| !x.is_finite())) {
        return Err(UsageError::new("--settings", "angles must be finite"));
    }
    let convention = cli
        .convention
        .or(file.convention)
        .map(|c| c.parse::<Convention>().map_err(|e| UsageError::new("--convention", e.to_string())))
        .transpose()?
        .unwrap_or_default();
    let method = cli
        .method
        .or(file.method)
        .map(|m| m.parse::<QuadratureMethod>().map_err(|e| UsageError::new("--method", e.to_string())))
        .transpose()?
        .unwrap_or_default();

    let x0 = cli.x0.or(file.x0);
    if x0.is_some_and(|x| !(x > 0.0 && x < 1.0)) {
        return Err(UsageError::new("--x0", "must lie strictly between 0 and 1"));
    }
    let s = cli.s.or(file.s);
    if s.is_some_and(|s| !(s > 0.0 && s.is_finite())) {
        return Err(UsageError::new("--s", "must be positive"));
    }
    let diffusion = cli.diffusion.or(file.diffusion).unwrap_or(DEFAULT_DIFFUSION);
    if !(diffusion > 0.0 && diffusion.is_finite()) {
        return Err(UsageError::new("--diffusion", "must be positive"));
    }
    let points = cli.points.or(file.points).unwrap_or(DEFAULT_POINTS);
    if points < 2 {
        return Err(UsageError::new("--points", "must be at least 2"));
    }
    let default_format = if command == Command::Chsh { Format::Json } else { Format::Csv };

    let config = RunConfig {
        command,
        seed,
        seed_from_entropy: cli.entropy,
        trials,
        samples,
        grid_resolution,
        max_steps,
        amplitudes,
        model,
        theta_grid,
        settings,
        convention,
        method,
        x0,
        s,
        diffusion,
        points,
        output: cli.output.or(file.output),
        format: cli.format.or(file.format).unwrap_or(default_format),
        threads,
    };
    match command {
        Command::Born | Command::Walk => {
            required("--amplitudes", command, config.amplitudes.as_ref())?;
        }
        Command::Greens => {
            required("--x0", command, config.x0)?;
            required("--s", command, config.s)?;
        }
        Command::Bell => {
            required("--model", command, config.model)?;
            required("--theta-grid", command, config.theta_grid)?;
        }
        Command::Chsh => {
            required("--model", command, config.model)?;
            required("--settings", command, config.settings)?;
        }
        Command::C2 => {
            required("--theta-grid", command, config.theta_grid)?;
        }
    }
    Ok(config)
}

/// Parses `args` (program name first) into a [`RunConfig`].
pub fn parse_config<I, T>(args: I) -> Result<RunConfig, ParseOutcome>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(ParseOutcome::Clap)?;
    resolve(cli).map_err(ParseOutcome::Usage)
}

/// Why [`parse_config`] produced no config.
#[derive(Debug)]
pub enum ParseOutcome {
    /// Includes `--help` and `--version`, which are not failures.
    Clap(clap::Error),
    Usage(UsageError),
}

impl ParseOutcome {
    pub fn exit_code(&self) -> i32 {
        match self {
            ParseOutcome::Clap(e) if !e.use_stderr() => 0,
            _ => 2,
        }
    }
}

impl fmt::Display for ParseOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParseOutcome::Clap(e) => write!(f, "{}", e.render()),
            ParseOutcome::Usage(e) => write!(f, "error: {e}"),
        }
    }
}
