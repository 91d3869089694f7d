//! Command-line entry point: generate datasets, fit MCU/MVU/PCA models,
//! compare methods, run inverse optimization and replay past runs.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mcu::pipeline::{
    cmd_compare, cmd_fit, cmd_generate, cmd_optimize, cmd_replay, exit_code, Overrides, RunConfig,
};
use mcu::unfold::Method;
use mcu::{McuError, Result};

#[derive(Parser)]
#[command(
    name = "mcu",
    about = "Maximum covariance unfolding regression for point-cloud responses",
    version
)]
struct Cli {
    /// Path to the run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the master seed (beats MCU_SEED and the config file).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the output directory (beats MCU_OUTPUT_DIR).
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    /// Unfolding method: mcu, mvu or pca (beats MCU_METHOD).
    #[arg(long, global = true)]
    method: Option<String>,
    /// Continue past SDP convergence failures (or set MCU_ALLOW_NONCONVERGED=1).
    #[arg(long, global = true)]
    allow_nonconverged: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset into the output directory.
    Generate,
    /// Fit one method and write its model bundle.
    Fit,
    /// Fit all three methods and write the comparison report.
    Compare,
    /// Recover the control setting that reproduces a nominal response.
    Optimize {
        /// Nominal response as a one-row (or one-column) CSV; omitted in
        /// generator mode, where a held-out sample is synthesized.
        #[arg(long)]
        nominal: Option<PathBuf>,
        /// True controls of the nominal, comma-separated, for scoring.
        #[arg(long)]
        truth: Option<String>,
    },
    /// Re-run a recorded run and verify its artifacts are bit-identical.
    Replay {
        /// Directory of the original run (must contain config_echo.toml).
        #[arg(long)]
        run: PathBuf,
        /// Where to place the replayed artifacts.
        #[arg(long)]
        scratch: PathBuf,
    },
}

/// Flags > environment > config file.
fn resolve_overrides(cli: &Cli) -> Result<Overrides> {
    let mut o = Overrides::default();
    if let Ok(v) = std::env::var("MCU_SEED") {
        o.seed = Some(
            v.parse()
                .map_err(|_| McuError::Config(format!("MCU_SEED is not an integer: {v}")))?,
        );
    }
    if let Ok(v) = std::env::var("MCU_OUTPUT_DIR") {
        o.output = Some(PathBuf::from(v));
    }
    if let Ok(v) = std::env::var("MCU_METHOD") {
        o.method = Some(Method::parse(&v)?);
    }
    if let Ok(v) = std::env::var("MCU_ALLOW_NONCONVERGED") {
        o.allow_nonconverged = v == "1" || v.eq_ignore_ascii_case("true");
    }
    if let Some(seed) = cli.seed {
        o.seed = Some(seed);
    }
    if let Some(out) = &cli.output {
        o.output = Some(out.clone());
    }
    if let Some(m) = &cli.method {
        o.method = Some(Method::parse(m)?);
    }
    if cli.allow_nonconverged {
        o.allow_nonconverged = true;
    }
    Ok(o)
}

fn load(cli: &Cli, overrides: &Overrides) -> Result<RunConfig> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| McuError::Config("--config is required for this command".into()))?;
    RunConfig::load(path, overrides)
}

fn parse_truth(raw: &str) -> Result<Vec<f64>> {
    raw.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| McuError::Config(format!("bad --truth component '{t}'")))
        })
        .collect()
}

fn run(cli: &Cli) -> Result<ExitCode> {
    let overrides = resolve_overrides(cli)?;
    let method = overrides.method.unwrap_or(Method::Mcu);
    match &cli.command {
        Command::Generate => {
            let config = load(cli, &overrides)?;
            let files = cmd_generate(&config)?;
            for f in files {
                println!("wrote {}", f.display());
            }
        }
        Command::Fit => {
            let config = load(cli, &overrides)?;
            // config file may name the method when no flag/env is set
            let method = match (&overrides.method, &config.unfold.method) {
                (Some(m), _) => *m,
                (None, Some(name)) => Method::parse(name)?,
                (None, None) => Method::Mcu,
            };
            let dir = cmd_fit(&config, method, overrides.allow_nonconverged)?;
            println!("wrote model bundle {}", dir.display());
        }
        Command::Compare => {
            let config = load(cli, &overrides)?;
            let report = cmd_compare(&config, overrides.allow_nonconverged)?;
            for m in &report.methods {
                println!(
                    "{}: median RRE {:.6}, IQR {:.6}",
                    m.method, m.rre.median, m.rre.iqr
                );
            }
            println!("wrote {}", config.output_dir.join("comparison.json").display());
        }
        Command::Optimize { nominal, truth } => {
            let config = load(cli, &overrides)?;
            let truth = truth.as_deref().map(parse_truth).transpose()?;
            let report = cmd_optimize(
                &config,
                method,
                nominal.as_deref(),
                truth.as_deref(),
                overrides.allow_nonconverged,
            )?;
            println!(
                "recovered controls {:?} (objective {:.6e})",
                report.x_star, report.objective
            );
            if let Some(dev) = report.covariate_deviation {
                println!("covariate deviation {dev:.6}");
            }
        }
        Command::Replay { run, scratch } => {
            let mismatches = cmd_replay(run, scratch)?;
            if mismatches.is_empty() {
                println!("replay bit-identical");
            } else {
                for m in &mismatches {
                    eprintln!("mismatch: {}", m.display());
                }
                eprintln!("error: replay produced {} mismatched artifacts", mismatches.len());
                return Ok(ExitCode::from(3));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
