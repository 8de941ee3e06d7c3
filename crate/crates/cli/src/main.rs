mod commands;
mod io;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use settings::Settings;

/// Online particle smoothing, score estimation, recursive maximum
/// likelihood and BIC model selection for SDE state-space models.
#[derive(Debug, Parser)]
#[command(name = "pathsmooth", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a dataset from a built-in model.
    Simulate(RunFlags),
    /// Estimate the score at a fixed θ over R independent replicates.
    Score(RunFlags),
    /// Fit θ online by recursive maximum likelihood.
    Fit(RunFlags),
    /// Track online BIC for several models and their pairwise differences.
    Select(RunFlags),
    /// Run the oracle validation suite.
    Validate(ValidateFlags),
}

#[derive(Debug, Args)]
struct RunFlags {
    /// Built-in model name; `select` takes a comma-separated list.
    #[arg(long)]
    model: Option<String>,
    /// Comma-separated parameter vector.
    #[arg(long, allow_hyphen_values = true)]
    theta: Option<String>,
    /// Starting parameter for `fit` and `select`.
    #[arg(long, allow_hyphen_values = true)]
    theta0: Option<String>,
    /// Number of observations to simulate (rows written, `y_0` included).
    #[arg(long = "n")]
    n: Option<usize>,
    /// Number of particles.
    #[arg(long = "N")]
    particles: Option<usize>,
    /// Grid steps per observation interval.
    #[arg(long = "M")]
    steps: Option<usize>,
    /// Independent replicates for `score`.
    #[arg(long = "R")]
    replicates: Option<usize>,
    /// Jump augmentation: `one` or `two`.
    #[arg(long)]
    construct: Option<String>,
    /// Score functional: `fd` or `analytic`.
    #[arg(long)]
    grad: Option<String>,
    /// `multinomial`, `systematic` or `stratified`.
    #[arg(long)]
    resample: Option<String>,
    /// Resample only when ESS falls below this fraction of N.
    #[arg(long)]
    ess: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Observation noise standard deviation.
    #[arg(long)]
    obs_noise: Option<f64>,
    /// Time between observations.
    #[arg(long)]
    delta: Option<f64>,
    /// Initial state.
    #[arg(long, allow_hyphen_values = true)]
    x0: Option<f64>,
    /// Jump rate λ for `ou-jump`.
    #[arg(long)]
    jump_rate: Option<f64>,
    /// Jump-size half-width ζ for `ou-jump`.
    #[arg(long)]
    jump_width: Option<f64>,
    /// `simulate`: also write the latent states.
    #[arg(long)]
    latent: bool,
    /// `score`: attach the Kalman score (O–U only).
    #[arg(long)]
    oracle: bool,
    /// `fit`: `adam` or `rm` (Robbins–Monro).
    #[arg(long)]
    rule: Option<String>,
    /// ADAM step size α.
    #[arg(long)]
    alpha: Option<f64>,
    /// Robbins–Monro gain γ₀.
    #[arg(long)]
    gamma0: Option<f64>,
    /// Robbins–Monro decay exponent κ.
    #[arg(long)]
    kappa: Option<f64>,
}

#[derive(Debug, Args)]
struct ValidateFlags {
    /// Run only the named checks (repeatable).
    #[arg(long = "check")]
    checks: Vec<String>,
    /// Multiply every tolerance by this factor.
    #[arg(long)]
    tolerance_scale: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Optional CSV report.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Numerical(String),
    Validation(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Validation(_) => 4,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
            CliError::Validation(m) => write!(f, "validation failed: {m}"),
        }
    }
}

impl From<pathsmooth::error::Error> for CliError {
    fn from(e: pathsmooth::error::Error) -> Self {
        use pathsmooth::error::Error as E;
        match e {
            E::UnknownModel(_)
            | E::InvalidArgument(_)
            | E::DimensionMismatch { .. }
            | E::InadmissibleParameter { .. }
            | E::StreamLengthMismatch { .. }
            | E::NonSquareDiffusion { .. } => CliError::Config(e.to_string()),
            other => CliError::Numerical(other.to_string()),
        }
    }
}

fn put<T: ToString>(s: &mut Settings, key: &str, v: &Option<T>) {
    if let Some(v) = v {
        s.set(key, v.to_string());
    }
}

/// Config file first, then flags on top.
fn resolve(command: &str, f: &RunFlags) -> Result<Settings, CliError> {
    let mut s = Settings::default();
    if let Some(path) = &f.config {
        s.merge_file(path, command)?;
    }
    put(&mut s, "model", &f.model);
    put(&mut s, "theta", &f.theta);
    put(&mut s, "theta0", &f.theta0);
    put(&mut s, "n", &f.n);
    put(&mut s, "N", &f.particles);
    put(&mut s, "M", &f.steps);
    put(&mut s, "R", &f.replicates);
    put(&mut s, "construct", &f.construct);
    put(&mut s, "grad", &f.grad);
    put(&mut s, "resample", &f.resample);
    put(&mut s, "ess", &f.ess);
    put(&mut s, "seed", &f.seed);
    put(&mut s, "data", &f.data.as_ref().map(|p| p.display().to_string()));
    put(&mut s, "out", &f.out.as_ref().map(|p| p.display().to_string()));
    put(&mut s, "obs_noise", &f.obs_noise);
    put(&mut s, "delta", &f.delta);
    put(&mut s, "x0", &f.x0);
    put(&mut s, "jump_rate", &f.jump_rate);
    put(&mut s, "jump_width", &f.jump_width);
    put(&mut s, "rule", &f.rule);
    put(&mut s, "alpha", &f.alpha);
    put(&mut s, "gamma0", &f.gamma0);
    put(&mut s, "kappa", &f.kappa);
    if f.latent {
        s.set("latent", "true");
    }
    if f.oracle {
        s.set("oracle", "true");
    }
    resolve_seed(&mut s)?;
    Ok(s)
}

/// `--seed`, then the config file, then `PATHSMOOTH_SEED`, then 0.
fn resolve_seed(s: &mut Settings) -> Result<(), CliError> {
    if !s.has("seed") {
        let env = std::env::var("PATHSMOOTH_SEED").unwrap_or_else(|_| "0".into());
        s.set("seed", env);
    }
    s.require::<u64>("seed").map(|_| ())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate(f) => commands::simulate(resolve("simulate", &f)?),
        Command::Score(f) => commands::score(resolve("score", &f)?),
        Command::Fit(f) => commands::fit(resolve("fit", &f)?),
        Command::Select(f) => commands::select(resolve("select", &f)?),
        Command::Validate(f) => {
            let mut s = Settings::default();
            if let Some(path) = &f.config {
                s.merge_file(path, "validate")?;
            }
            put(&mut s, "seed", &f.seed);
            put(&mut s, "tolerance_scale", &f.tolerance_scale);
            put(&mut s, "out", &f.out.as_ref().map(|p| p.display().to_string()));
            if !f.checks.is_empty() {
                s.set("checks", f.checks.join(","));
            }
            if !s.has("seed") && std::env::var("PATHSMOOTH_SEED").is_ok() {
                resolve_seed(&mut s)?;
            }
            commands::validate(s)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("pathsmooth: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
