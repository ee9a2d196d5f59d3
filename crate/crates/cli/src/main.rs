use std::num::NonZeroUsize;
use std::path::PathBuf;
use std::process::ExitCode;

use cklemap::inverse::Method;
use cklemap::pipeline::{self, Config, InvertOptions, Overrides, PipelineError};
use clap::{Args, Parser, Subcommand};
use faer::Par;

/// Log-transmissivity estimation from head and log-transmissivity data.
#[derive(Parser)]
#[command(name = "cklemap", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct DatasetArg {
    /// Directory holding the dataset; defaults to the output directory.
    #[arg(long)]
    dataset: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic reference field, heads and measurements.
    Generate {
        #[command(flatten)]
        common: Common,
    },
    /// Fit kernel hyperparameters to the log-transmissivity measurements.
    FitGp {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DatasetArg,
    },
    /// Build the conditional Karhunen–Loève basis.
    BuildBasis {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DatasetArg,
        #[arg(long)]
        ny: Option<usize>,
        #[arg(long)]
        rtol: Option<f64>,
    },
    /// Estimate the log-transmissivity field.
    Invert {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DatasetArg,
        /// map, cklemap or cklemap-accel.
        #[arg(long)]
        method: Option<Method>,
        #[arg(long)]
        gamma: Option<f64>,
        /// Number of basis modes; forces the basis to be rebuilt.
        #[arg(long)]
        ny: Option<usize>,
        /// Truncation tolerance; forces the basis to be rebuilt.
        #[arg(long)]
        rtol: Option<f64>,
    },
    /// Time all estimators over a ladder of refined meshes.
    Bench {
        #[command(flatten)]
        common: Common,
        /// Per-inversion wall-clock budget.
        #[arg(long)]
        time_budget_s: Option<f64>,
    },
}

fn configure_threads() -> Result<(), String> {
    let par = match std::env::var("CKLEMAP_THREADS") {
        Err(_) => Par::Seq,
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(0 | 1) => Par::Seq,
            Ok(n) => Par::Rayon(NonZeroUsize::new(n).expect("n > 1")),
            Err(_) => {
                return Err(format!(
                    "CKLEMAP_THREADS must be a non-negative integer, got `{v}`"
                ))
            }
        },
    };
    faer::set_global_parallelism(par);
    Ok(())
}

fn load(common: &Common, overrides: Overrides) -> Result<Config, PipelineError> {
    let mut cfg = Config::load(&common.config)?;
    cfg.apply(&Overrides {
        seed: common.seed,
        ..overrides
    })?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<ExitCode, PipelineError> {
    match cli.command {
        Command::Generate { common } => {
            let cfg = load(&common, Overrides::default())?;
            pipeline::cmd_generate(&cfg, &common.out)?;
        }
        Command::FitGp { common, data } => {
            let cfg = load(&common, Overrides::default())?;
            let dataset = data.dataset.unwrap_or_else(|| common.out.clone());
            let fit = pipeline::cmd_fit_gp(&cfg, &dataset, &common.out)?;
            eprintln!(
                "sigma = {:.6e}, length = {:.6e}, nugget = {:.3e}",
                fit.params.sigma, fit.params.length, fit.params.nugget
            );
        }
        Command::BuildBasis {
            common,
            data,
            ny,
            rtol,
        } => {
            let cfg = load(
                &common,
                Overrides {
                    n_modes: ny,
                    rtol,
                    ..Default::default()
                },
            )?;
            let dataset = data.dataset.unwrap_or_else(|| common.out.clone());
            let meta = pipeline::cmd_build_basis(&cfg, &dataset, &common.out)?;
            eprintln!(
                "N_y = {}, rtol achieved = {:.3e}",
                meta.n_modes, meta.rtol_achieved
            );
        }
        Command::Invert {
            common,
            data,
            method,
            gamma,
            ny,
            rtol,
        } => {
            let cfg = load(
                &common,
                Overrides {
                    method,
                    gamma,
                    n_modes: ny,
                    rtol,
                    ..Default::default()
                },
            )?;
            let dataset = data.dataset.unwrap_or_else(|| common.out.clone());
            let opts = InvertOptions {
                reuse_basis: ny.is_none() && rtol.is_none(),
            };
            let report = pipeline::cmd_invert(&cfg, &dataset, &common.out, opts)?;
            eprintln!(
                "{}: {} iterations, status {:?}, cost {:.6e}",
                report.method.name(),
                report.iterations,
                report.status,
                report.final_cost
            );
            if let (Some(e2), Some(einf)) = (report.rel_l2_error, report.abs_linf_error) {
                eprintln!("rel L2 error {e2:.6e}, abs Linf error {einf:.6e}");
            }
            if !report.converged {
                return Ok(ExitCode::from(2));
            }
        }
        Command::Bench {
            common,
            time_budget_s,
        } => {
            let cfg = load(
                &common,
                Overrides {
                    time_budget_s,
                    ..Default::default()
                },
            )?;
            let fit = pipeline::cmd_bench(&cfg, &common.out, |r| {
                eprintln!(
                    "N={} {} replicate {}: {:?} in {}",
                    r.n,
                    r.method.name(),
                    r.replicate,
                    r.status,
                    r.time_s.map_or("-".to_string(), |t| format!("{t:.3}s"))
                );
            })?;
            for (name, m) in &fit.methods {
                match (m.a, m.s) {
                    (Some(a), Some(s)) => eprintln!("{name}: time ~ {a:.3e} * N^{s:.3}"),
                    _ => eprintln!("{name}: not enough completed levels to fit"),
                }
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    if let Err(msg) = configure_threads() {
        eprintln!("error: {msg}");
        return ExitCode::from(1);
    }
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
