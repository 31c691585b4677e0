//! `reldiff`: batch experiments for relativistic diffusion in a thermal bath.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 domain or
//! invariant error, 3 numerical non-convergence or an unstable step.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use reldiff::{Advection, Error, FrictionSign};

use config::{OutputFormat, RunConfig};
use output::Output;

#[derive(Parser)]
#[command(name = "reldiff", version, about = "Relativistic diffusion in a thermal electromagnetic bath")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML (or JSON) run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Data files to write; metadata is always JSON.
    #[arg(long, global = true, value_enum)]
    format: Option<OutputFormat>,
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true, value_parser = ["flux-zero", "paper-eq56"])]
    friction_sign: Option<String>,
    #[arg(long, global = true, value_parser = ["velocity", "momentum"])]
    advection: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Diffusion tensor at one momentum.
    Alpha {
        /// Contravariant momentum `t,x,y,z`.
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        p: Option<Vec<f64>>,
    },
    /// Bath scalars and friction from the spectral density.
    Spectral,
    /// Euler–Maruyama ensemble and stationarity report.
    Simulate,
    /// Monte Carlo estimate of the diffusion tensor in sampled fields.
    Kubo,
    /// Stationary momentum profile of the transport equation.
    FokkerPlanck,
    /// Flux-residual and detailed-balance checks at random points.
    EquilibriumCheck,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Alpha { .. } => "alpha",
            Command::Spectral => "spectral",
            Command::Simulate => "simulate",
            Command::Kubo => "kubo",
            Command::FokkerPlanck => "fokker-planck",
            Command::EquilibriumCheck => "equilibrium-check",
        }
    }
}

/// Error in the invocation or configuration.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn from_kebab<T: serde::de::DeserializeOwned>(s: &str) -> anyhow::Result<T> {
    Ok(serde_json::from_value(serde_json::Value::String(s.to_string()))?)
}

fn resolve(cli: &Cli) -> anyhow::Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path).map_err(|e| UsageError(format!("{e:#}")))?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    }
    if let Some(f) = cli.format {
        cfg.format = f;
    }
    if let Some(t) = cli.threads {
        cfg.threads = Some(t);
    }
    if let Some(s) = &cli.friction_sign {
        cfg.bath.friction_sign = from_kebab::<FrictionSign>(s)?;
    }
    if let Some(a) = &cli.advection {
        cfg.advection = from_kebab::<Advection>(a)?;
    }
    if let Command::Alpha { p: Some(p) } = &cli.command {
        if p.len() != 4 {
            return Err(UsageError(format!("--p needs four components t,x,y,z, got {}", p.len())).into());
        }
        cfg.alpha.p = Some([p[0], p[1], p[2], p[3]]);
    }
    Ok(cfg)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut cfg = resolve(&cli)?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(t) = cfg.threads {
        if t == 0 {
            return Err(UsageError("--threads must be ≥ 1".into()).into());
        }
        pool = pool.num_threads(t);
    }
    let pool = pool.build()?;
    let threads = pool.current_num_threads();
    let mut out = Output::create(&cfg.out.clone(), cfg.format)?;
    pool.install(|| match cli.command {
        Command::Alpha { .. } => commands::alpha_cmd(&mut cfg, &mut out),
        Command::Spectral => commands::spectral_cmd(&mut cfg, &mut out),
        Command::Simulate => commands::simulate_cmd(&mut cfg, &mut out),
        Command::Kubo => commands::kubo_cmd(&mut cfg, &mut out),
        Command::FokkerPlanck => commands::fokker_planck_cmd(&mut cfg, &mut out),
        Command::EquilibriumCheck => commands::equilibrium_check_cmd(&mut cfg, &mut out),
    })?;
    out.finish(cli.command.name(), &cfg, threads)
}

fn exit_code(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<UsageError>().is_some() {
        return 1;
    }
    match e.downcast_ref::<Error>() {
        Some(Error::NonConvergence { .. } | Error::Stability { .. }) => 3,
        Some(Error::Io(_)) => 1,
        Some(_) => 2,
        None => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
