//! `fatou`: command-line front end for the normal-form and basin pipeline.
//!
//! Exit codes: 0 success, 1 verification failure, 2 configuration or
//! precondition failure, 3 numerical failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{parse_point, parse_window, RunConfig, SliceSection, VerifySection};

#[derive(Debug)]
pub enum CliError {
    /// Bad configuration or an unmet precondition (exit 2).
    Config(String),
    /// A numerical procedure failed (exit 3).
    Numerical(String),
    /// Verification ran and some check failed (exit 1).
    VerifyFailed,
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::VerifyFailed => 1,
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "fatou", version, about = "Normal forms, Fatou-Bieberbach maps and basin rendering")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default, Clone)]
struct Common {
    /// TOML run configuration; flags override its values.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Gallery example (koenigs1d, resonant2d, henon_fb, exp_regular, power_cover[:n]).
    #[arg(long, short)]
    example: Option<String>,
    /// Normal-form order.
    #[arg(long)]
    m: Option<u32>,
    /// Maximum pullback depth for membership.
    #[arg(long)]
    k_max: Option<usize>,
    #[arg(long)]
    newton_tol: Option<f64>,
    #[arg(long)]
    psi_tol: Option<f64>,
    #[arg(long)]
    theta_tol: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for written artifacts.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Compute the normal form (G, T) and write it with a residual report.
    Normalize {
        #[command(flatten)]
        common: Common,
        /// Serialized polynomial germ to normalize instead of an example.
        #[arg(long)]
        germ: Option<PathBuf>,
    },
    /// Evaluate Psi at basin points given as `re,im;re,im`.
    PsiEval {
        #[command(flatten)]
        common: Common,
        #[arg(long = "point", short, allow_hyphen_values = true)]
        points: Vec<String>,
    },
    /// Evaluate Theta at points given as `re,im;re,im`.
    ThetaEval {
        #[command(flatten)]
        common: Common,
        #[arg(long = "point", short, allow_hyphen_values = true)]
        points: Vec<String>,
    },
    /// Classify a 2-plane slice of the basin and write a P6 image plus metadata.
    Render {
        #[command(flatten)]
        common: Common,
        /// Worker threads (falls back to FATOU_THREADS, then all cores).
        #[arg(long, env = "FATOU_THREADS")]
        threads: Option<usize>,
        #[arg(long)]
        resolution: Option<usize>,
        /// `s0,s1,t0,t1`.
        #[arg(long, allow_hyphen_values = true)]
        window: Option<String>,
    },
    /// Enumerate points of the Riemann domain over a base point.
    Fibers {
        #[command(flatten)]
        common: Common,
        /// Base point `re,im;re,im` (default: a generic point near the fixed point).
        #[arg(long, short, allow_hyphen_values = true)]
        point: Option<String>,
        /// Branch-label window of the first pullback.
        #[arg(long)]
        depth: Option<i64>,
    },
    /// Continue the inverse branch around the example's branch loop.
    Monodromy {
        #[command(flatten)]
        common: Common,
        #[arg(long, allow_hyphen_values = true)]
        turns: Option<i32>,
        #[arg(long)]
        segments: Option<usize>,
    },
    /// Run the verification checks and print a line-oriented report.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Comma-separated check names; an empty string selects nothing.
        #[arg(long)]
        checks: Option<String>,
        #[arg(long)]
        samples: Option<usize>,
        /// Perturb the normal form before the residual check.
        #[arg(long)]
        corrupt_normal_form: bool,
    },
}

/// The config file (if any) for `command`, with flags applied on top.
fn merged(common: &Common, command: &str) -> Result<RunConfig, CliError> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(c) = cfg.command.as_deref().filter(|c| *c != command) {
        return Err(CliError::Config(format!("config is for command '{c}', not '{command}'")));
    }
    macro_rules! over {
        ($($field:ident),*) => {
            $(if let Some(v) = common.$field.clone() { cfg.$field = Some(v); })*
        };
    }
    over!(example, m, k_max, newton_tol, psi_tol, theta_tol, seed, out);
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Normalize { common, germ } => {
            let mut cfg = merged(&common, "normalize")?;
            if germ.is_some() {
                cfg.germ = germ;
            }
            cfg.validate()?;
            commands::normalize(&cfg)
        }
        Command::PsiEval { common, points } => {
            let cfg = with_points(merged(&common, "psi-eval")?, &points)?;
            commands::psi_eval(&cfg)
        }
        Command::ThetaEval { common, points } => {
            let cfg = with_points(merged(&common, "theta-eval")?, &points)?;
            commands::theta_eval(&cfg)
        }
        Command::Render {
            common,
            threads,
            resolution,
            window,
        } => {
            let mut cfg = merged(&common, "render")?;
            if threads.is_some() {
                cfg.threads = threads;
            }
            if resolution.is_some() || window.is_some() {
                let sec = cfg.slice.get_or_insert_with(SliceSection::default);
                if resolution.is_some() {
                    sec.resolution = resolution;
                }
                if let Some(w) = window {
                    sec.window = Some(parse_window(&w)?);
                }
            }
            cfg.validate()?;
            commands::render(&cfg)
        }
        Command::Fibers { common, point, depth } => {
            let mut cfg = merged(&common, "fibers")?;
            if let Some(p) = point {
                cfg.points = Some(vec![parse_point(&p)?]);
            }
            if depth.is_some() {
                cfg.depth = depth;
            }
            cfg.validate()?;
            commands::fibers(&cfg)
        }
        Command::Monodromy { common, turns, segments } => {
            let mut cfg = merged(&common, "monodromy")?;
            if turns.is_some() {
                cfg.turns = turns;
            }
            if segments.is_some() {
                cfg.segments = segments;
            }
            cfg.validate()?;
            commands::monodromy(&cfg)
        }
        Command::Verify {
            common,
            checks,
            samples,
            corrupt_normal_form,
        } => {
            let mut cfg = merged(&common, "verify")?;
            let sec = cfg.verify.get_or_insert_with(VerifySection::default);
            if let Some(c) = checks {
                sec.checks = Some(c.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect());
            }
            if samples.is_some() {
                sec.samples = samples;
            }
            if corrupt_normal_form {
                sec.corrupt_normal_form = Some(true);
            }
            cfg.validate()?;
            commands::verify(&cfg)
        }
    }
}

fn with_points(mut cfg: RunConfig, points: &[String]) -> Result<RunConfig, CliError> {
    if !points.is_empty() {
        cfg.points = Some(points.iter().map(|p| parse_point(p)).collect::<Result<_, _>>()?);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            match &e {
                CliError::Config(msg) => eprintln!("error: {msg}"),
                CliError::Numerical(msg) => eprintln!("numerical failure: {msg}"),
                CliError::VerifyFailed => eprintln!("verification failed"),
            }
            ExitCode::from(e.code())
        }
    }
}
