//! Experiment dispatch, result files and run manifests.

use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use collapse_walk::analytic::{self, FluxCheck};
use collapse_walk::bell::{
    self, bell64, chsh, image_correlation_event, CorrelationEstimate, DetectorSetting, EventDiagnostics, Estimator,
    ModelTag,
};
use collapse_walk::walk::{run_walk_traced, trial_rng};
use collapse_walk::{
    born_statistics, AnalyticError, BellError, DiffusionParams, JointState, QuantumState, StateError, WalkConfig,
    WalkError, WalkOutcome,
};
use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;

use crate::config::{parse_config, Command, Format, RunConfig, UsageError, THREADS_ENV};
use crate::output::{pretty_json, round_json, Cell, Table};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Usage(#[from] UsageError),
    /// Numerical failure: oracle mismatch, non-convergence, step caps.
    #[error("{0}")]
    Numeric(String),
    #[error("{0}")]
    Io(String),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Usage(_) => 2,
            RunError::Numeric(_) | RunError::Io(_) => 1,
        }
    }
}

impl From<WalkError> for RunError {
    fn from(e: WalkError) -> Self {
        match e {
            WalkError::InvalidConfig(_) | WalkError::State(_) => RunError::Usage(UsageError::new("--amplitudes", e.to_string())),
            WalkError::DegenerateGrid { .. } => RunError::Usage(UsageError::new("--grid-resolution", e.to_string())),
            _ => RunError::Numeric(e.to_string()),
        }
    }
}

impl From<AnalyticError> for RunError {
    fn from(e: AnalyticError) -> Self {
        match e {
            AnalyticError::InvalidArgument(_) => RunError::Usage(UsageError::new("--x0", e.to_string())),
            _ => RunError::Numeric(e.to_string()),
        }
    }
}

impl From<BellError> for RunError {
    fn from(e: BellError) -> Self {
        match e {
            BellError::ZeroVector | BellError::AngleOutOfRange(_) => {
                RunError::Usage(UsageError::new("--settings", e.to_string()))
            }
            BellError::NoSamples => RunError::Usage(UsageError::new("--samples", e.to_string())),
            BellError::Unknown { kind, .. } => RunError::Usage(UsageError::new(&format!("--{kind}"), e.to_string())),
            _ => RunError::Numeric(e.to_string()),
        }
    }
}

impl From<StateError> for RunError {
    fn from(e: StateError) -> Self {
        RunError::Usage(UsageError::new("--amplitudes", e.to_string()))
    }
}

/// Rejection-sampler diagnostics for one angle of an `image-event` run.
#[derive(Debug, Clone, Serialize)]
pub struct AcceptanceRecord {
    pub theta_deg: f64,
    pub c2: f64,
    pub proposals: u64,
    pub acceptance_rate: f64,
    pub mu_zero_fraction: f64,
    pub spectator_mean: f64,
    pub spectator_stderr: f64,
}

impl AcceptanceRecord {
    fn new(theta_deg: f64, d: &EventDiagnostics) -> Self {
        Self {
            theta_deg,
            c2: d.constants.c2,
            proposals: d.proposals,
            acceptance_rate: d.acceptance_rate,
            mu_zero_fraction: d.mu_zero_fraction,
            spectator_mean: d.spectator_mean,
            spectator_stderr: d.spectator_stderr,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct Diagnostics {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub completed_trials: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub excluded_trials: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_steps: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steps_stderr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub walk: Option<WalkOutcome>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub acceptance: Vec<AcceptanceRecord>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub flux_check: Option<FluxCheck>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_exit_time: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub config: RunConfig,
    /// "flag" or "entropy".
    pub seed_source: &'static str,
    pub worker_threads: usize,
    pub duration_seconds: f64,
    pub status: &'static str,
    pub exit_code: i32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub diagnostics: Diagnostics,
}

/// Computed result before rendering.
#[derive(Debug, Clone)]
pub enum Output {
    Table(Table),
    /// A single record: `json` for the JSON format, `row` for CSV.
    Record { json: Value, row: Table },
}

impl Output {
    pub fn render(&self, format: Format) -> String {
        match (self, format) {
            (Output::Table(t), Format::Csv) | (Output::Record { row: t, .. }, Format::Csv) => t.to_csv(),
            (Output::Table(t), Format::Json) => pretty_json(&t.to_json_value()),
            (Output::Record { json, .. }, Format::Json) => {
                let mut v = json.clone();
                round_json(&mut v);
                pretty_json(&v)
            }
        }
    }
}

fn walk_config(config: &RunConfig) -> Result<WalkConfig, RunError> {
    let mut w = WalkConfig::new(config.grid_resolution, config.seed)?;
    if let Some(m) = config.max_steps {
        w = w.with_max_steps(m)?;
    }
    Ok(w)
}

fn quantum_state(config: &RunConfig) -> Result<QuantumState, RunError> {
    let text = config.amplitudes.as_deref().ok_or_else(|| UsageError::new("--amplitudes", "missing"))?;
    Ok(QuantumState::from_str(text)?)
}

fn born(config: &RunConfig, diag: &mut Diagnostics) -> Result<Output, RunError> {
    let state = quantum_state(config)?;
    let stats = born_statistics(&state, config.trials, &walk_config(config)?)?;
    let mut t = Table::new(["state", "weight", "count", "frequency", "stderr"]);
    for (i, w) in state.weights().into_iter().enumerate() {
        t.push(vec![i.into(), w.into(), stats.winner_counts[i].into(), stats.frequencies[i].into(), stats.stderr[i].into()]);
    }
    diag.completed_trials = Some(stats.trials);
    diag.excluded_trials = Some(stats.excluded);
    diag.mean_steps = Some(stats.mean_steps);
    diag.steps_stderr = Some(stats.steps_stderr);
    Ok(Output::Table(t))
}

fn walk(config: &RunConfig, diag: &mut Diagnostics) -> Result<Output, RunError> {
    let state = quantum_state(config)?;
    let mut joint = JointState::form(&state);
    let n = joint.dim();
    let mut t = Table::new(std::iter::once("step".to_string()).chain((0..n).map(|i| format!("w{i}"))));
    let mut rng = trial_rng(config.seed, 0);
    let outcome = run_walk_traced(&mut joint, &walk_config(config)?, &mut rng, |step, j| {
        t.push(std::iter::once(Cell::from(step)).chain(j.weights().iter().map(|&w| Cell::from(w))).collect());
    })?;
    diag.walk = Some(outcome);
    Ok(Output::Table(t))
}

fn greens(config: &RunConfig, diag: &mut Diagnostics) -> Result<Output, RunError> {
    let (x0, s) = (config.x0.unwrap_or_default(), config.s.unwrap_or_default());
    let params = DiffusionParams::new(config.diffusion, x0)?;
    // the closed-form absorption probabilities must pass the flux self-test
    analytic::absorption_probs(x0)?;
    diag.flux_check = Some(analytic::flux_check(x0)?);
    diag.mean_exit_time = Some(analytic::mean_exit_time(&params));
    let mut t = Table::new(["x", "value"]);
    let last = (config.points - 1) as f64;
    for i in 0..config.points {
        let x = i as f64 / last;
        t.push(vec![x.into(), analytic::greens_tilde(x, s, &params)?.into()]);
    }
    Ok(Output::Table(t))
}

fn estimator(config: &RunConfig) -> Result<Estimator, RunError> {
    let model = config.model.ok_or_else(|| UsageError::new("--model", "missing"))?;
    Ok(Estimator::new(model, config.samples, config.seed)
        .with_convention(config.convention)
        .with_method(config.method))
}

fn theta_degrees(config: &RunConfig) -> Result<Vec<f64>, RunError> {
    Ok(config.theta_grid.ok_or_else(|| UsageError::new("--theta-grid", "missing"))?.degrees())
}

fn bell_curve(config: &RunConfig, diag: &mut Diagnostics) -> Result<Output, RunError> {
    let est = estimator(config)?;
    let a = DetectorSetting::coplanar_degrees(0.0);
    let mut t = Table::new(["theta_deg", "value", "stderr", "n", "model"]);
    for (i, deg) in theta_degrees(config)?.into_iter().enumerate() {
        let b = DetectorSetting::coplanar_degrees(deg);
        let family = i as u32;
        let c: CorrelationEstimate = if est.model == ModelTag::ImageEvent {
            let (c, d) = image_correlation_event(&a, &b, est.convention, est.samples, est.seed, family)?;
            diag.acceptance.push(AcceptanceRecord::new(deg, &d));
            c
        } else {
            est.correlate(&a, &b, family)?
        };
        t.push(vec![deg.into(), c.value.into(), c.stderr.into(), c.n.into(), c.model.as_str().into()]);
    }
    Ok(Output::Table(t))
}

fn term_json(label: &str, c: &CorrelationEstimate) -> Value {
    json!({ "pair": label, "value": c.value, "stderr": c.stderr, "n": c.n })
}

fn chsh_run(config: &RunConfig) -> Result<Output, RunError> {
    let est = estimator(config)?;
    let deg = config.settings.ok_or_else(|| UsageError::new("--settings", "missing"))?;
    let [a, a_prime, b, b_prime] = deg.map(DetectorSetting::coplanar_degrees);
    let c = chsh(&est, &a, &a_prime, &b, &b_prime)?.chsh.expect("chsh report");
    let o = bell64(&est, &a, &b, &b_prime)?.bell64.expect("bell64 report");
    let chsh_terms: Vec<Value> = ["a,b", "a,b'", "a',b", "a',b'"].iter().zip(&c.terms).map(|(l, t)| term_json(l, t)).collect();
    let bell64_terms: Vec<Value> = ["a,b", "a,b'", "b,b'"].iter().zip(&o.terms).map(|(l, t)| term_json(l, t)).collect();
    let json = json!({
        "model": est.model.as_str(),
        "convention": est.convention.to_string(),
        "settings_deg": deg,
        "S": c.s,
        "stderr": c.stderr,
        "bound": c.bound,
        "violated": c.violated,
        "terms": chsh_terms,
        "bell64": {
            "settings_deg": [deg[0], deg[2], deg[3]],
            "lhs": o.lhs,
            "rhs": o.rhs,
            "stderr": o.stderr,
            "violated": o.violated,
            "terms": bell64_terms,
        },
    });
    let mut row = Table::new([
        "model",
        "convention",
        "a_deg",
        "a_prime_deg",
        "b_deg",
        "b_prime_deg",
        "S",
        "stderr",
        "bound",
        "violated",
        "bell64_lhs",
        "bell64_rhs",
        "bell64_stderr",
        "bell64_violated",
    ]);
    row.push(vec![
        est.model.as_str().into(),
        est.convention.to_string().as_str().into(),
        deg[0].into(),
        deg[1].into(),
        deg[2].into(),
        deg[3].into(),
        c.s.into(),
        c.stderr.into(),
        c.bound.into(),
        c.violated.into(),
        o.lhs.into(),
        o.rhs.into(),
        o.stderr.into(),
        o.violated.into(),
    ]);
    Ok(Output::Record { json, row })
}

fn c2_curve(config: &RunConfig) -> Result<Output, RunError> {
    let mut t = Table::new(["theta_deg", "c2", "overlap", "residual"]);
    for deg in theta_degrees(config)? {
        let c = bell::solve_c2(deg.to_radians().min(std::f64::consts::PI))?;
        t.push(vec![deg.into(), c.c2.into(), c.overlap.into(), c.residual.into()]);
    }
    Ok(Output::Table(t))
}

/// Runs the experiment in the current thread pool. Pure apart from CPU time.
pub fn compute(config: &RunConfig) -> Result<(Output, Diagnostics), RunError> {
    let mut diag = Diagnostics::default();
    let output = match config.command {
        Command::Born => born(config, &mut diag)?,
        Command::Walk => walk(config, &mut diag)?,
        Command::Greens => greens(config, &mut diag)?,
        Command::Bell => bell_curve(config, &mut diag)?,
        Command::Chsh => chsh_run(config)?,
        Command::C2 => c2_curve(config)?,
    };
    Ok((output, diag))
}

/// Thread count from `--threads`, capped by the environment variable.
pub fn worker_threads(config: &RunConfig) -> usize {
    let available = std::thread::available_parallelism().map_or(1, |n| n.get());
    let cap = std::env::var(THREADS_ENV).ok().and_then(|v| v.trim().parse::<usize>().ok()).filter(|&n| n > 0);
    let wanted = config.threads.unwrap_or(available);
    cap.map_or(wanted, |c| wanted.min(c)).max(1)
}

/// `<output>.manifest.json`.
pub fn manifest_path(output: &Path) -> PathBuf {
    let mut name = output.as_os_str().to_owned();
    name.push(".manifest.json");
    PathBuf::from(name)
}

fn write_file(path: &Path, text: &str) -> Result<(), RunError> {
    std::fs::write(path, text).map_err(|e| RunError::Io(format!("{}: {e}", path.display())))
}

/// Runs `config`, writes the result (to `config.output` or stdout) and, with
/// an output path, the manifest. Returns the process exit code.
pub fn execute(config: &RunConfig) -> i32 {
    let started = Instant::now();
    let threads = worker_threads(config);
    let result = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| RunError::Io(e.to_string()))
        .and_then(|pool| pool.install(|| compute(config)));
    let (diagnostics, error) = match result {
        Ok((output, diag)) => {
            let text = output.render(config.format);
            let written = match &config.output {
                Some(path) => write_file(path, &text),
                None => {
                    print!("{text}");
                    Ok(())
                }
            };
            (diag, written.err())
        }
        Err(e) => (Diagnostics::default(), Some(e)),
    };
    let exit_code = error.as_ref().map_or(0, RunError::exit_code);
    if let Some(e) = &error {
        eprintln!("error: {e}");
    }
    if let Some(path) = &config.output {
        let manifest = RunManifest {
            tool: "collapse-walk",
            version: env!("CARGO_PKG_VERSION"),
            config: config.clone(),
            seed_source: if config.seed_from_entropy { "entropy" } else { "flag" },
            worker_threads: threads,
            duration_seconds: started.elapsed().as_secs_f64(),
            status: if error.is_none() { "ok" } else { "error" },
            exit_code,
            error: error.as_ref().map(ToString::to_string),
            diagnostics,
        };
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serialises") + "\n";
        if let Err(e) = write_file(&manifest_path(path), &text) {
            eprintln!("error: {e}");
            return exit_code.max(1);
        }
    }
    exit_code
}

/// Entry point: parses `args` (program name first) and executes.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match parse_config(args) {
        Ok(config) => execute(&config),
        Err(outcome) => {
            let code = outcome.exit_code();
            if code == 0 {
                print!("{outcome}");
            } else {
                eprint!("{outcome}");
                if !outcome.to_string().ends_with('\n') {
                    eprintln!();
                }
            }
            code
        }
    }
}
